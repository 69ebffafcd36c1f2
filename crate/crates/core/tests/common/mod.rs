#![allow(dead_code)]

use smp_core::rng::{self, Rng};
use smp_core::{MomentSpec, PoolSpec, Smp, Tensor};

pub fn random_tensor(r: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng::uniform(r, lo, hi)).unwrap()
}

/// Random geometry valid for an `h x w` plane under exclusive pooling,
/// exercising stride, padding and dilation.
pub fn random_pool(r: &mut Rng, h: usize, w: usize) -> PoolSpec {
    loop {
        let kh = rng::range(r, 1, 4);
        let kw = rng::range(r, 1, 4);
        let pool = PoolSpec::new(kh, kw)
            .with_stride(rng::range(r, 1, 3), rng::range(r, 1, 3))
            .with_padding(rng::range(r, 0, kh / 2 + 1), rng::range(r, 0, kw / 2 + 1))
            .with_dilation(rng::range(r, 1, 2), rng::range(r, 1, 2));
        if Smp::new(pool, MomentSpec::sap()).shape(&[1, 1, h, w]).is_ok() {
            return pool;
        }
    }
}

/// Input coordinates of window `(oh, ow)` along with validity, computed
/// straight from the geometry definition.
pub fn window_cells(pool: &PoolSpec, h: usize, w: usize, oh: usize, ow: usize) -> Vec<Option<(usize, usize)>> {
    let mut cells = Vec::new();
    for kh in 0..pool.kernel_h {
        for kw in 0..pool.kernel_w {
            let ih = (oh * pool.stride_h + kh * pool.dilation_h) as isize - pool.pad_h as isize;
            let iw = (ow * pool.stride_w + kw * pool.dilation_w) as isize - pool.pad_w as isize;
            let inside = ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w;
            cells.push(inside.then_some((ih as usize, iw as usize)));
        }
    }
    cells
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Richardson-extrapolated central difference of a scalar objective along
/// coordinate `j`: `(4 D(h/2) - D(h)) / 3`, truncation O(h^4).
pub fn richardson(f: &dyn Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    let central = |step: f64| {
        let mut xp = x.to_vec();
        xp[j] = x[j] + step;
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let fm = f(&xp);
        (fp - fm) / (2.0 * step)
    };
    (4.0 * central(h / 2.0) - central(h)) / 3.0
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Directional objective `<op(x), u>` computed per output difference.
pub fn objective<'a>(op: &'a dyn Fn(&Tensor) -> Tensor, shape: &'a [usize], u: &'a Tensor) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x: &[f64]| {
        let t = Tensor::new(shape.to_vec(), x.to_vec()).unwrap();
        op(&t).dot(u)
    }
}

/// SMP forward without normalization, recomputed window by window from the
/// geometry definition. Output layout `(N, order*C, H', W')`.
pub fn naive_smp(x: &Tensor, pool: &PoolSpec, order: usize) -> Tensor {
    let [n, c, h, w] = x.dims4();
    let (oh, ow) = smp_core::output_dims(h, w, pool).unwrap();
    let mut out = Tensor::zeros(vec![n, order * c, oh, ow]).unwrap();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for z in 0..ow {
                    let values: Vec<f64> = window_cells(pool, h, w, y, z)
                        .into_iter()
                        .flatten()
                        .map(|(ih, iw)| x.get4(ni, ci, ih, iw))
                        .collect();
                    let mv = smp_core::central_moments(&values, order).unwrap();
                    for i in 1..=order {
                        let at = out.offset4(ni, (i - 1) * c + ci, y, z);
                        out.data_mut()[at] = mv.get(i);
                    }
                }
            }
        }
    }
    out
}
