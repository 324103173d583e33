//! Patch-budget resolution planning.
//!
//! Given an image of `h0 x w0` pixels, square patches of side `p` and a
//! budget of `n_max` patches, the plan picks the largest scale `s <= 1`
//! whose patch grid `ceil(s*h0/p) x ceil(s*w0/p)` fits the budget, and
//! reports the resulting target size and two distortion figures.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FitParams {
    pub h0: u32,
    pub w0: u32,
    pub patch: u32,
    pub n_max: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("{0} must be positive")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionPlan {
    pub s_star: BigRational,
    pub grid_h: u64,
    pub grid_w: u64,
    pub h_star: u64,
    pub w_star: u64,
    /// False when the original area already fits the budget.
    pub resized: bool,
    /// `1 - H*W* / (h0 w0)`, clamped at 0; 0 when not resized.
    pub mdr_literal: BigRational,
    /// `1 - s*^2 h0 w0 / (H* W*)`: area added by rounding each side up to
    /// a multiple of the patch size.
    pub mdr_rounding: BigRational,
}

fn big(v: u64) -> BigInt {
    BigInt::from(v)
}

pub fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(big(n), big(d))
}

/// `ceil(x)` for a non-negative rational.
pub fn ceil_u64(x: &BigRational) -> u64 {
    x.ceil().to_integer().to_u64().expect("ceilings of plan quantities fit in u64")
}

impl FitParams {
    pub fn new(h0: u32, w0: u32, patch: u32, n_max: u32) -> Result<Self, FitError> {
        let p = FitParams { h0, w0, patch, n_max };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), FitError> {
        for (v, name) in [(self.h0, "h0"), (self.w0, "w0"), (self.patch, "patch"), (self.n_max, "n_max")] {
            if v == 0 {
                return Err(FitError::InvalidParams(name));
            }
        }
        Ok(())
    }

    /// Whether the grid at scale `s` fits the budget.
    pub fn feasible(&self, s: &BigRational) -> bool {
        let p = big(self.patch as u64);
        let gh = (s * big(self.h0 as u64) / &p).ceil();
        let gw = (s * big(self.w0 as u64) / &p).ceil();
        (gh * gw).to_integer() <= big(self.n_max as u64)
    }
}

/// Largest scale whose grid fits, capped at 1.
///
/// Every feasible scale is bounded by `min(gh*p/h0, gw*p/w0)` for its own
/// grid, and that bound is itself feasible, so the optimum is the best such
/// value over grids with `gw = floor(n_max/gh)`.
fn optimal_scale(f: &FitParams) -> (u64, u64) {
    let p = f.patch as u128;
    let (h0, w0) = (f.h0 as u128, f.w0 as u128);
    // best scale as num/den, compared by cross-multiplication
    let (mut num, mut den) = (0u128, 1u128);
    for gh in 1..=f.n_max as u128 {
        let gw = f.n_max as u128 / gh;
        // min(gh*p/h0, gw*p/w0)
        let (cn, cd) = if gh * p * w0 <= gw * p * h0 { (gh * p, h0) } else { (gw * p, w0) };
        if cn * den > num * cd {
            (num, den) = (cn, cd);
        }
        if num >= den {
            break;
        }
    }
    if num >= den {
        (1, 1)
    } else {
        (num as u64, den as u64)
    }
}

pub fn plan_resolution(params: &FitParams) -> Result<ResolutionPlan, FitError> {
    params.validate()?;
    let (n, d) = optimal_scale(params);
    let s_star = ratio(n, d);
    let p = params.patch as u64;
    let (h0, w0) = (params.h0 as u64, params.w0 as u64);
    let grid_h = ceil_u64(&(&s_star * big(h0) / big(p)));
    let grid_w = ceil_u64(&(&s_star * big(w0) / big(p)));
    let (h_star, w_star) = (p * grid_h, p * grid_w);
    let area = big(h0) * big(w0);
    let resized = area > big(p) * big(p) * big(params.n_max as u64);
    let target_area = big(h_star) * big(w_star);
    let mdr_literal = if resized {
        let v = BigRational::one() - BigRational::new(target_area.clone(), area.clone());
        v.max(BigRational::zero())
    } else {
        BigRational::zero()
    };
    let scaled_area = &s_star * &s_star * BigRational::from_integer(area);
    let mdr_rounding = BigRational::one() - scaled_area / BigRational::from_integer(target_area);
    Ok(ResolutionPlan { s_star, grid_h, grid_w, h_star, w_star, resized, mdr_literal, mdr_rounding })
}

fn check_positive(values: &[(u64, &'static str)]) -> Result<(), FitError> {
    match values.iter().find(|(v, _)| *v == 0) {
        Some((_, name)) => Err(FitError::InvalidParams(name)),
        None => Ok(()),
    }
}

/// Rounding distortion bound `(p-1)(h0+w0) / (h0 w0)`.
pub fn mdr_bound(p: u64, h0: u64, w0: u64) -> Result<BigRational, FitError> {
    check_positive(&[(p, "patch"), (h0, "h0"), (w0, "w0")])?;
    Ok(BigRational::new(big(p - 1) * (big(h0) + big(w0)), big(h0) * big(w0)))
}

/// Square-image form `2(p-1) / h0`.
pub fn mdr_bound_square(p: u64, h0: u64) -> Result<BigRational, FitError> {
    check_positive(&[(p, "patch"), (h0, "h0")])?;
    Ok(BigRational::new(big(2) * big(p - 1), big(h0)))
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Output record with the scale as an exact `num/den` string.
#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub s_star: String,
    pub grid: [u64; 2],
    pub target: [u64; 2],
    pub resized: bool,
    pub mdr_literal: f64,
    pub mdr_rounding: f64,
}

impl From<&ResolutionPlan> for PlanReport {
    fn from(p: &ResolutionPlan) -> Self {
        PlanReport {
            s_star: format!("{}/{}", p.s_star.numer(), p.s_star.denom()),
            grid: [p.grid_h, p.grid_w],
            target: [p.h_star, p.w_star],
            resized: p.resized,
            mdr_literal: to_f64(&p.mdr_literal),
            mdr_rounding: to_f64(&p.mdr_rounding),
        }
    }
}
