//! Wall-clock comparison of SAP and SMP(n) on one geometry.

use std::time::Instant;

use serde::Serialize;
use smp_core::smp::sap_forward_with;
use smp_core::{op_cost, Exec, MomentSpec, NormKind, OpCostReport, PoolSpec, Smp, Tensor};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n: usize,
    pub shape: Vec<usize>,
    pub pool: PoolSpec,
    /// Normalization of orders >= 3; `None` runs them unnormalized.
    pub norm: NormKind,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub order: usize,
    pub median_ns: u64,
    pub ns_per_output_element: f64,
    pub output_elements: usize,
    pub op_cost: OpCostReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub shape: Vec<usize>,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
    /// `extra_vs_sap` of SMP(4) over that of SMP(2).
    pub extra_ratio_4_over_2: f64,
    /// Median time of SMP(4) over median time of SAP.
    pub smp4_over_sap_time: f64,
}

fn spec(order: usize, norm: NormKind) -> Result<MomentSpec> {
    Ok(if norm == NormKind::None {
        MomentSpec::unnormalized(order)?
    } else {
        MomentSpec::new(order, norm)?
    })
}

fn median_ns(repeats: usize, mut f: impl FnMut() -> Result<Tensor>) -> Result<(u64, usize)> {
    let len = f()?.len();
    let mut times: Vec<u64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            f()?;
            Ok(start.elapsed().as_nanos() as u64)
        })
        .collect::<Result<_>>()?;
    times.sort_unstable();
    Ok((times[times.len() / 2], len))
}

pub fn bench(cfg: &BenchConfig, exec: Exec) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut r = smp_core::rng::stream(cfg.seed, 0);
    let x = Tensor::from_fn(cfg.shape.clone(), |_| smp_core::rng::unit(&mut r))?;

    let mut orders = vec![1, 2, 4];
    if !orders.contains(&cfg.n) {
        orders.push(cfg.n);
        orders.sort_unstable();
    }
    let row = |name: String, order: usize, (median, len): (u64, usize), spec: &MomentSpec| -> Result<BenchRow> {
        Ok(BenchRow {
            name,
            order,
            median_ns: median,
            ns_per_output_element: median as f64 / len as f64,
            output_elements: len,
            op_cost: op_cost(&cfg.shape, &cfg.pool, spec)?,
        })
    };

    let mut rows = vec![row(
        "sap".into(),
        1,
        median_ns(cfg.repeats, || Ok(sap_forward_with(&x, &cfg.pool, exec)?))?,
        &MomentSpec::sap(),
    )?];
    for order in orders {
        let spec = spec(order, cfg.norm)?;
        let smp = Smp::new(cfg.pool, spec).with_exec(exec);
        let timing = median_ns(cfg.repeats, || Ok(smp.forward(&x)?))?;
        rows.push(row(format!("smp{order}"), order, timing, &spec)?);
    }

    let find = |name: &str| rows.iter().find(|r| r.name == name).expect("row present");
    let extra_ratio_4_over_2 = find("smp4").op_cost.extra_vs_sap as f64 / find("smp2").op_cost.extra_vs_sap as f64;
    let smp4_over_sap_time = find("smp4").median_ns as f64 / find("sap").median_ns.max(1) as f64;
    Ok(BenchReport {
        shape: cfg.shape.clone(),
        repeats: cfg.repeats,
        extra_ratio_4_over_2,
        smp4_over_sap_time,
        rows,
    })
}

/// Plain-text rendering of a report.
pub fn table(report: &BenchReport) -> String {
    let mut out = format!(
        "{:<6} {:>14} {:>12} {:>16} {:>14}\n",
        "op", "median ns", "ns/elem", "mul-adds", "extra vs sap"
    );
    for r in &report.rows {
        out += &format!(
            "{:<6} {:>14} {:>12.3} {:>16} {:>14}\n",
            r.name, r.median_ns, r.ns_per_output_element, r.op_cost.mul_add_count, r.op_cost.extra_vs_sap
        );
    }
    out += &format!(
        "extra ratio smp4/smp2: {:.3}\ntime ratio smp4/sap: {:.3}\n",
        report.extra_ratio_4_over_2, report.smp4_over_sap_time
    );
    out
}
