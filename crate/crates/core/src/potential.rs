//! Double-well potentials, their convex/smooth splitting `F = F1 + F2`, and
//! the Yosida/Moreau regularisation of the convex part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Double-well potential.
///
/// * `RegularQuartic`: `F = (1 - s^2)^2 / 4`, split as `F1 = s^4/4`,
///   `F2 = 1/4 - s^2/2` (so `F2' = -s` is globally Lipschitz).
/// * `Logarithmic`: `F = theta/2 [(1+s)ln(1+s) + (1-s)ln(1-s)] - theta0/2 s^2`
///   on `(-1, 1)`, split into the entropy part `F1` and `F2 = -theta0 s^2/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    RegularQuartic,
    Logarithmic { theta: f64, theta0: f64 },
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Logarithmic {
            theta: 0.3,
            theta0: 0.6,
        }
    }
}

/// Convex part of a potential, as used by the resolvent `(I + lambda F1')^{-1}`.
pub trait ConvexPart {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
    fn second_derivative(&self, s: f64) -> f64;
    /// `l` in `dom F1 = [-l, l]`; `f64::INFINITY` for regular potentials.
    fn half_width(&self) -> f64;
}

impl PotentialSpec {
    pub fn half_width(&self) -> f64 {
        match self {
            PotentialSpec::RegularQuartic => f64::INFINITY,
            PotentialSpec::Logarithmic { .. } => 1.0,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.half_width().is_finite()
    }

    /// Checks `0 < theta < theta0` for the logarithmic kind.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if let PotentialSpec::Logarithmic { theta, theta0 } = *self {
            if !(theta > 0.0 && theta < theta0 && theta0.is_finite()) {
                return Err(format!(
                    "A3: logarithmic potential requires 0 < theta < theta0 (got theta = {theta}, theta0 = {theta0})"
                ));
            }
        }
        Ok(())
    }

    /// Interval of `s` sampled by coercivity and convexity checks.
    pub fn sampling_interval(&self) -> (f64, f64) {
        match self {
            PotentialSpec::RegularQuartic => (-2.0, 2.0),
            PotentialSpec::Logarithmic { .. } => (-0.999, 0.999),
        }
    }

    fn in_domain(&self, s: f64) -> Result<()> {
        let l = self.half_width();
        if s.is_finite() && s.abs() < l {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                value: s.abs(),
                half_width: l,
            })
        }
    }

    /// `F^{(order)}(s)` for `order` in `0..=3`.
    pub fn eval(&self, order: u8, s: f64) -> Result<f64> {
        self.in_domain(s)?;
        Ok(self.f1(order, s) + self.f2(order, s))
    }

    /// Derivatives of the convex part; the caller guarantees `|s| < l`.
    pub fn f1(&self, order: u8, s: f64) -> f64 {
        match *self {
            PotentialSpec::RegularQuartic => match order {
                0 => 0.25 * s.powi(4),
                1 => s * s * s,
                2 => 3.0 * s * s,
                3 => 6.0 * s,
                _ => panic!("derivative order {order} not supported"),
            },
            PotentialSpec::Logarithmic { theta, .. } => match order {
                0 => {
                    let xlx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
                    0.5 * theta * (xlx(1.0 + s) + xlx(1.0 - s))
                }
                1 => 0.5 * theta * (s.ln_1p() - (-s).ln_1p()),
                2 => theta / (1.0 - s * s),
                3 => 2.0 * theta * s / (1.0 - s * s).powi(2),
                _ => panic!("derivative order {order} not supported"),
            },
        }
    }

    /// Derivatives of the smooth part.
    pub fn f2(&self, order: u8, s: f64) -> f64 {
        let c = match *self {
            PotentialSpec::RegularQuartic => 1.0,
            PotentialSpec::Logarithmic { theta0, .. } => theta0,
        };
        let offset = match self {
            PotentialSpec::RegularQuartic => 0.25,
            PotentialSpec::Logarithmic { .. } => 0.0,
        };
        match order {
            0 => offset - 0.5 * c * s * s,
            1 => -c * s,
            2 => -c,
            3 => 0.0,
            _ => panic!("derivative order {order} not supported"),
        }
    }

    /// `A F'(s) - chi^2 s`, which must blow up at the ends of the domain.
    pub fn blowup_quantity(&self, a: f64, chi: f64, s: f64) -> Result<f64> {
        Ok(a * self.eval(1, s)? - chi * chi * s)
    }
}

impl ConvexPart for PotentialSpec {
    fn value(&self, s: f64) -> f64 {
        self.f1(0, s)
    }
    fn derivative(&self, s: f64) -> f64 {
        self.f1(1, s)
    }
    fn second_derivative(&self, s: f64) -> f64 {
        self.f1(2, s)
    }
    fn half_width(&self) -> f64 {
        PotentialSpec::half_width(self)
    }
}

/// Regularisation parameter of the Yosida approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YosidaParams {
    lambda: f64,
}

impl YosidaParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda > 0.0 {
            Ok(Self { lambda })
        } else {
            Err(Error::InvalidArgument(format!(
                "Yosida lambda = {lambda} must be positive"
            )))
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Resolvent `r = (I + lambda F1')^{-1}(s)`.
///
/// `F1'` is nondecreasing with `F1'(0) = 0`, so the root lies between 0 and
/// `s`; a Newton iteration is kept inside that bracket by bisection.
pub fn resolvent<C: ConvexPart + ?Sized>(convex: &C, lambda: YosidaParams, s: f64) -> Result<f64> {
    let lam = lambda.lambda;
    if !s.is_finite() {
        return Err(Error::NonFinite("Yosida argument".into()));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let l = convex.half_width();
    let g = |r: f64| r + lam * convex.derivative(r) - s;
    let (mut lo, mut hi) = if s > 0.0 {
        (0.0, s.min(l))
    } else {
        (s.max(-l), 0.0)
    };
    let tol = 1e-13 * s.abs().max(1.0);
    let mut r = 0.5 * (lo + hi);
    for _ in 0..400 {
        let gr = g(r);
        if gr.abs() <= tol {
            return Ok(r);
        }
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let slope = 1.0 + lam * convex.second_derivative(r);
        let newton = r - gr / slope;
        r = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * s.abs().max(1.0) {
            // Bracket collapsed to machine resolution.
            return Ok(r);
        }
    }
    Err(Error::RootSolve(s))
}

/// `F'_{1,lambda}(s) = (s - r)/lambda` with `r` the resolvent of `s`.
pub fn yosida_prime<C: ConvexPart + ?Sized>(
    convex: &C,
    lambda: YosidaParams,
    s: f64,
) -> Result<f64> {
    let r = resolvent(convex, lambda, s)?;
    Ok((s - r) / lambda.lambda)
}

/// Moreau regularisation `F1(0) + int_0^s F'_{1,lambda}(r) dr` by adaptive
/// Simpson quadrature.
pub fn moreau<C: ConvexPart + ?Sized>(convex: &C, lambda: YosidaParams, s: f64) -> Result<f64> {
    let base = convex.value(0.0);
    if s == 0.0 {
        return Ok(base);
    }
    let f = |x: f64| yosida_prime(convex, lambda, x);
    let (a, b) = (0.0, s);
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let integral = adaptive_simpson(&f, a, b, fa, fm, fb, whole, 1e-13 * s.abs().max(1.0), 48)
        .ok_or(Error::Quadrature(s))??;
    Ok(base + integral)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Option<Result<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = match f(lm) {
        Ok(v) => v,
        Err(e) => return Some(Err(e)),
    };
    let frm = match f(rm) {
        Ok(v) => v,
        Err(e) => return Some(Err(e)),
    };
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Some(Ok(left + right + delta / 15.0));
    }
    if depth == 0 {
        return None;
    }
    let l = adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Some(match (l, r) {
        (Ok(x), Ok(y)) => Ok(x + y),
        (Err(e), _) | (_, Err(e)) => Err(e),
    })
}
