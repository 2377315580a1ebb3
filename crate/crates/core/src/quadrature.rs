//! Globally adaptive Gauss–Kronrod (7/15) quadrature for vector-valued
//! integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-8,
            abs_tol: 1e-13,
            max_intervals: 5_000,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut k = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    f(center, buf);
    for d in 0..dim {
        k[d] = WGK[7] * buf[d];
        g[d] = WG[3] * buf[d];
    }
    for (idx, &x) in XGK[..7].iter().enumerate() {
        for sign in [-1.0, 1.0] {
            f(center + sign * half * x, buf);
            for d in 0..dim {
                k[d] += WGK[idx] * buf[d];
                if idx % 2 == 1 {
                    g[d] += WG[idx / 2] * buf[d];
                }
            }
        }
    }
    let mut error = 0.0f64;
    for d in 0..dim {
        k[d] *= half;
        g[d] *= half;
        error = error.max((k[d] - g[d]).abs());
    }
    Segment { a, b, value: k, error }
}

/// Integrates a vector-valued `f` over a finite `[a, b]`. `f(x, out)` writes
/// `dim` components into `out`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    assert!(a.is_finite() && b.is_finite(), "integrate needs finite limits");
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let mut buf = vec![0.0; dim];
    let first = kronrod(&mut f, a, b, dim, &mut buf);
    let mut total = first.value.clone();
    let mut total_err = first.error;
    let mut heap = BinaryHeap::from([first]);

    loop {
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let target = opts.abs_tol.max(opts.rel_tol * scale);
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::QuadratureFailure {
                tolerance: target,
                estimate: total_err,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let left = kronrod(&mut f, worst.a, mid, dim, &mut buf);
        let right = kronrod(&mut f, mid, worst.b, dim, &mut buf);
        for d in 0..dim {
            total[d] += left.value[d] + right.value[d] - worst.value[d];
        }
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to shed the drift from incremental updates
    let mut sum = vec![0.0; dim];
    for seg in heap.iter() {
        for d in 0..dim {
            sum[d] += seg.value[d];
        }
    }
    Ok(sum)
}

/// `∫_lo^∞ g(t) e^{-μt} dt` via the substitution `u = e^{-μt}`, which maps
/// the tail onto the bounded `(0, e^{-μ lo}]` with integrand `g(-ln u / μ) / μ`.
pub fn integrate_discounted_tail<G>(mut g: G, mu: f64, lo: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>>
where
    G: FnMut(f64, &mut [f64]),
{
    assert!(mu > 0.0, "tail integral needs a positive discount");
    let upper = (-mu * lo).exp();
    let mut out = integrate(
        |u, out| {
            let t = if u > 0.0 { -u.ln() / mu } else { f64::INFINITY };
            g(t, out)
        },
        0.0,
        upper,
        dim,
        opts,
    )?;
    for v in out.iter_mut() {
        *v /= mu;
    }
    Ok(out)
}

/// `∫_lo^hi g(t) e^{-μt} dt` for finite or infinite `hi`.
pub fn integrate_discounted<G>(mut g: G, mu: f64, lo: f64, hi: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>>
where
    G: FnMut(f64, &mut [f64]),
{
    if hi.is_infinite() {
        return integrate_discounted_tail(g, mu, lo, dim, opts);
    }
    integrate(
        |t, out| {
            g(t, out);
            let w = (-mu * t).exp();
            for v in out.iter_mut() {
                *v *= w;
            }
        },
        lo,
        hi,
        dim,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x, o| o[0] = x.powi(5) - 2.0 * x, 0.0, 2.0, 1, QuadOptions::default()).unwrap();
        assert!((v[0] - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn exponential_tail() {
        // ∫_1^∞ (1/2 + 1/2 e^{-2t}) e^{-t} dt = e^{-1}/2 + e^{-3}/6
        let v = integrate_discounted_tail(
            |t, o| o[0] = 0.5 + 0.5 * (-2.0 * t).exp(),
            1.0,
            1.0,
            1,
            QuadOptions::default(),
        )
        .unwrap();
        let want = (-1.0f64).exp() / 2.0 + (-3.0f64).exp() / 6.0;
        assert!((v[0] - want).abs() < 1e-12, "{} vs {want}", v[0]);
    }

    #[test]
    fn oscillatory_vector_integrand() {
        let v = integrate(
            |x, o| {
                o[0] = (5.0 * x).sin();
                o[1] = (5.0 * x).cos();
            },
            0.0,
            10.0,
            2,
            QuadOptions::default(),
        )
        .unwrap();
        assert!((v[0] - (1.0 - (50.0f64).cos()) / 5.0).abs() < 1e-10);
        assert!((v[1] - (50.0f64).sin() / 5.0).abs() < 1e-10);
    }

    #[test]
    fn gives_up_on_non_integrable() {
        let opts = QuadOptions {
            max_intervals: 50,
            ..QuadOptions::default()
        };
        let r = integrate(|x, o| o[0] = 1.0 / (x * x), 0.0, 1.0, 1, opts);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }
}
