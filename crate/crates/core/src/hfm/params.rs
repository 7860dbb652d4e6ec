//! Parameter vectors, the parameter space they are drawn from, and the
//! temperature-corrected material law of the plate problem.

use std::fmt;

use super::HfmError;

/// One point in feature space. For the plate problem the layout is
/// `[E (GPa), nu, rho (kg/m^3), T (degC)]`, but any dimension >= 1 is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Plate-problem constructor.
    pub fn plate(e_gpa: f64, nu: f64, rho: f64, temperature: f64) -> Self {
        Self(vec![e_gpa, nu, rho, temperature])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Marginal distribution of one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureDistribution {
    /// Gaussian, truncated to mean +- 4 std.
    Gaussian { mean: f64, std: f64 },
    /// Uniform on `[lo, hi]`; used by analytic test functions.
    Uniform { lo: f64, hi: f64 },
}

/// Number of standard deviations on either side of the mean that bound a
/// Gaussian feature.
pub const SIGMA_BOUND: f64 = 4.0;

impl FeatureDistribution {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            FeatureDistribution::Gaussian { mean, std } => {
                (mean - SIGMA_BOUND * std, mean + SIGMA_BOUND * std)
            }
            FeatureDistribution::Uniform { lo, hi } => (lo, hi),
        }
    }

    /// Maps a unit-interval coordinate through the inverse CDF of the
    /// (bounded) marginal. Gaussian features use the inverse CDF of the
    /// normal truncated to its bounds, so every image lies inside them.
    pub fn from_unit(&self, u: f64) -> f64 {
        match *self {
            FeatureDistribution::Gaussian { mean, std } => {
                use statrs::distribution::{ContinuousCDF, Normal};
                let n = Normal::standard();
                let lo = n.cdf(-SIGMA_BOUND);
                let hi = n.cdf(SIGMA_BOUND);
                let p = lo + u.clamp(0.0, 1.0) * (hi - lo);
                let z = n.inverse_cdf(p).clamp(-SIGMA_BOUND, SIGMA_BOUND);
                mean + std * z
            }
            FeatureDistribution::Uniform { lo, hi } => lo + u.clamp(0.0, 1.0) * (hi - lo),
        }
    }
}

/// A named, uncorrelated product of per-feature marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub features: Vec<FeatureDistribution>,
}

impl ParameterSpace {
    pub fn new(names: Vec<String>, features: Vec<FeatureDistribution>) -> Result<Self, HfmError> {
        if names.len() != features.len() || features.is_empty() {
            return Err(HfmError::Config(format!(
                "parameter space needs >= 1 feature and one name per feature (got {} names, {} features)",
                names.len(),
                features.len()
            )));
        }
        for (name, f) in names.iter().zip(&features) {
            let ok = match *f {
                FeatureDistribution::Gaussian { mean, std } => mean.is_finite() && std > 0.0,
                FeatureDistribution::Uniform { lo, hi } => lo.is_finite() && hi > lo,
            };
            if !ok {
                return Err(HfmError::Config(format!(
                    "feature `{name}` has a degenerate distribution {f:?}"
                )));
            }
        }
        Ok(Self { names, features })
    }

    /// Gaussian space from `(name, mean, std)` triples.
    pub fn gaussian(spec: &[(&str, f64, f64)]) -> Result<Self, HfmError> {
        Self::new(
            spec.iter().map(|(n, _, _)| n.to_string()).collect(),
            spec.iter()
                .map(|&(_, mean, std)| FeatureDistribution::Gaussian { mean, std })
                .collect(),
        )
    }

    /// The aluminum-plate distributions: E ~ N(68.9, 1.332^2) GPa,
    /// nu ~ N(0.33, 0.007^2), rho ~ N(2700, 2.7^2) kg/m^3, T ~ N(25, 6^2) degC.
    pub fn plate() -> Self {
        Self::gaussian(&[
            ("E", 68.9, 1.332),
            ("nu", 0.33, 0.007),
            ("rho", 2700.0, 2.7),
            ("T", 25.0, 6.0),
        ])
        .expect("static plate space is valid")
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.features.iter().map(|f| f.bounds()).collect()
    }

    /// Means for Gaussian features, midpoints for uniform ones.
    pub fn center(&self) -> ParameterVector {
        ParameterVector(
            self.features
                .iter()
                .map(|f| match *f {
                    FeatureDistribution::Gaussian { mean, .. } => mean,
                    FeatureDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
                })
                .collect(),
        )
    }

    pub fn contains(&self, theta: &ParameterVector) -> bool {
        theta.dim() == self.dim()
            && theta
                .0
                .iter()
                .zip(self.bounds())
                .all(|(&v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn from_unit(&self, unit: &[f64]) -> ParameterVector {
        ParameterVector(
            self.features
                .iter()
                .zip(unit)
                .map(|(f, &u)| f.from_unit(u))
                .collect(),
        )
    }
}

/// Temperature-corrected material constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveMaterial {
    /// Young modulus in GPa.
    pub e_gpa: f64,
    pub nu: f64,
    /// Density in kg/m^3.
    pub rho: f64,
}

impl EffectiveMaterial {
    /// Plate-wave speed `sqrt(E / (rho (1 - nu^2)))` in m/s.
    pub fn wave_speed(&self) -> f64 {
        (self.e_gpa * 1e9 / (self.rho * (1.0 - self.nu * self.nu))).sqrt()
    }
}

pub const E_TEMP_COEFF: f64 = 0.0263;
pub const NU_TEMP_COEFF: f64 = 0.003;
pub const RHO_TEMP_COEFF: f64 = 0.184;

/// Applies the linear temperature corrections
/// `E - 0.0263 T`, `nu + 0.003 T`, `rho - 0.184 T`.
pub fn derive_material(theta: &ParameterVector) -> Result<EffectiveMaterial, HfmError> {
    let [e, nu, rho, t] = theta.0[..] else {
        return Err(HfmError::InvalidMaterial(format!(
            "plate parameters need 4 features [E, nu, rho, T], got {}",
            theta.dim()
        )));
    };
    let m = EffectiveMaterial {
        e_gpa: e - E_TEMP_COEFF * t,
        nu: nu + NU_TEMP_COEFF * t,
        rho: rho - RHO_TEMP_COEFF * t,
    };
    if !(m.nu > 0.0 && m.nu < 0.5) {
        return Err(HfmError::InvalidMaterial(format!(
            "corrected Poisson ratio {} outside (0, 0.5) for theta = {theta}",
            m.nu
        )));
    }
    if !(m.e_gpa > 0.0 && m.rho > 0.0) {
        return Err(HfmError::InvalidMaterial(format!(
            "corrected E = {} GPa, rho = {} kg/m^3 must be positive for theta = {theta}",
            m.e_gpa, m.rho
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_temperature_is_identity() {
        let m = derive_material(&ParameterVector::plate(68.9, 0.33, 2700.0, 0.0)).unwrap();
        assert_eq!(m.e_gpa, 68.9);
        assert_eq!(m.nu, 0.33);
        assert_eq!(m.rho, 2700.0);
    }

    #[test]
    fn room_temperature_correction() {
        let m = derive_material(&ParameterVector::plate(68.9, 0.33, 2700.0, 25.0)).unwrap();
        assert!((m.e_gpa - 68.2425).abs() < 1e-12);
        assert!((m.nu - 0.405).abs() < 1e-12);
        assert!((m.rho - 2695.4).abs() < 1e-9);
    }

    #[test]
    fn mean_parameters_are_physical() {
        let space = ParameterSpace::plate();
        let m = derive_material(&space.center()).unwrap();
        assert!(m.e_gpa > 0.0 && m.rho > 0.0 && m.nu > 0.0 && m.nu < 0.5);
        let c = m.wave_speed();
        assert!(c > 4000.0 && c < 7000.0, "c = {c}");
    }

    #[test]
    fn hot_corner_is_rejected() {
        // nu = 0.358, T = 49 lands at nu^t = 0.505
        let err = derive_material(&ParameterVector::plate(68.9, 0.358, 2700.0, 49.0));
        assert!(matches!(err, Err(HfmError::InvalidMaterial(_))));
        assert!(derive_material(&ParameterVector::new(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn bounds_are_four_sigma() {
        let space = ParameterSpace::plate();
        let b = space.bounds();
        assert!((b[0].0 - (68.9 - 4.0 * 1.332)).abs() < 1e-12);
        assert!((b[3].1 - 49.0).abs() < 1e-12);
        let lo = space.from_unit(&[0.0; 4]);
        let hi = space.from_unit(&[1.0; 4]);
        assert!(space.contains(&lo) && space.contains(&hi));
        let mid = space.from_unit(&[0.5; 4]);
        for (a, b) in mid.0.iter().zip(&space.center().0) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
