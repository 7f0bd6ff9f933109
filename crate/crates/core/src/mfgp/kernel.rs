use super::{InputFidelityPoint, KernelParams};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn-5/2 correlation at scaled distance `r >= 0`.
#[inline]
pub fn matern52(r: f64) -> f64 {
    let sr = SQRT5 * r;
    (1.0 + sr + 5.0 / 3.0 * r * r) * (-sr).exp()
}

/// `d m(r) / d log(gamma)` divided by `(delta/gamma)^2` summed into `r^2`.
///
/// For `r^2 = sum (delta_i/gamma_i)^2`, the derivative of `m(r)` with respect
/// to `log gamma_i` equals `matern52_dlog(r) * (delta_i/gamma_i)^2`.
#[inline]
pub(crate) fn matern52_dlog(r: f64) -> f64 {
    let sr = SQRT5 * r;
    5.0 / 3.0 * (1.0 + sr) * (-sr).exp()
}

/// Product kernel `sigma^2 * m(r_x) * m(r_s)` in problem units.
pub fn kernel_eval(p: &InputFidelityPoint, q: &InputFidelityPoint, params: &KernelParams) -> f64 {
    let rx2: f64 =
        p.x.iter()
            .zip(&q.x)
            .zip(&params.gamma_x)
            .map(|((a, b), g)| ((a - b) / g).powi(2))
            .sum();
    let rs = (p.s - q.s).abs() / params.gamma_s;
    params.signal_variance * matern52(rx2.sqrt()) * matern52(rs)
}

/// Kernel on unit-cube coordinates with the fidelity appended as the last entry.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct UnitKernel {
    pub inv_ls: Vec<f64>,
    pub signal_variance: f64,
}

impl UnitKernel {
    /// `theta = [log ls_x.., log ls_s, log sigma^2]`.
    pub fn from_log(theta: &[f64]) -> Self {
        let m = theta.len() - 1;
        Self {
            inv_ls: theta[..m].iter().map(|t| (-t).exp()).collect(),
            signal_variance: theta[m].exp(),
        }
    }

    /// Stride of one point: design coordinates plus fidelity.
    #[inline]
    pub fn width(&self) -> usize {
        self.inv_ls.len()
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.width() - 1;
        let mut rx2 = 0.0;
        for i in 0..d {
            let t = (a[i] - b[i]) * self.inv_ls[i];
            rx2 += t * t;
        }
        let rs = (a[d] - b[d]).abs() * self.inv_ls[d];
        self.signal_variance * matern52(rx2.sqrt()) * matern52(rs)
    }
}
