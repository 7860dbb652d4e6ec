//! Saltelli designs and variance-based sensitivity estimators.
//!
//! First-order indices use the Saltelli (2010) estimator
//! `mean(f(B) (f(A_B) - f(A))) / V`, total indices the Jansen estimator
//! `mean((f(A) - f(A_B))^2) / (2 V)`, with `V` the population variance of
//! the pooled `f(A)`, `f(B)` outputs. Confidence half-widths are
//! `1.96 x` the bootstrap standard deviation.

use ndarray::Array2;
use rand::Rng;
use sobol::params::JoeKuoD6;
use sobol::Sobol;

use super::sampling::unit_to_space;
use super::{Surrogate, UqError};
use crate::hfm::{ParameterSpace, ParameterVector};

pub const BOOTSTRAP_RESAMPLES: usize = 100;
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignMode {
    /// Digitally shifted Sobol sequence (requires `N` a power of two).
    Sobol,
    /// Independent uniform draws.
    Random,
}

impl DesignMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sobol" => Some(Self::Sobol),
            "random" => Some(Self::Random),
            _ => None,
        }
    }
}

/// Base matrices `A`, `B` and the cross matrices: `ab[v]` is `A` with
/// column `v` taken from `B`, `ba[v]` is `B` with column `v` from `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaltelliDesign {
    pub n: usize,
    pub a: Vec<ParameterVector>,
    pub b: Vec<ParameterVector>,
    pub ab: Vec<Vec<ParameterVector>>,
    pub ba: Vec<Vec<ParameterVector>>,
}

impl SaltelliDesign {
    pub fn dim(&self) -> usize {
        self.ab.len()
    }

    /// `N (2 xi + 2)`.
    pub fn len(&self) -> usize {
        self.n * (2 * self.dim() + 2)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// All points in evaluation order: `A`, `B`, `A_B^(1..xi)`, `B_A^(1..xi)`.
    pub fn points(&self) -> Vec<ParameterVector> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.a.iter().cloned());
        out.extend(self.b.iter().cloned());
        for m in self.ab.iter().chain(&self.ba) {
            out.extend(m.iter().cloned());
        }
        out
    }
}

fn unit_points(dim2: usize, n: usize, seed: u64, mode: DesignMode) -> Vec<Vec<f64>> {
    let mut rng = crate::seed::rng(seed);
    match mode {
        DesignMode::Random => (0..n)
            .map(|_| (0..dim2).map(|_| rng.random::<f64>()).collect())
            .collect(),
        DesignMode::Sobol => {
            let shift: Vec<u32> = (0..dim2).map(|_| rng.random()).collect();
            let scale = 4_294_967_296.0; // 2^32
            // the first n points (including the origin) are skipped
            Sobol::<u32>::new(dim2, &JoeKuoD6::minimal())
                .skip(n)
                .take(n)
                .map(|p| {
                    p.iter()
                        .zip(&shift)
                        .map(|(&v, &s)| ((v ^ s) as f64 + 0.5) / scale)
                        .collect()
                })
                .collect()
        }
    }
}

pub fn saltelli_sample(
    space: &ParameterSpace,
    n: usize,
    seed: u64,
    mode: DesignMode,
) -> Result<SaltelliDesign, UqError> {
    if n < 2 {
        return Err(UqError::Config("Saltelli base size must be at least 2".into()));
    }
    if mode == DesignMode::Sobol && !n.is_power_of_two() {
        return Err(UqError::Config(format!("Sobol design needs a power-of-two N, got {n}")));
    }
    let d = space.dim();
    let unit = unit_points(2 * d, n, seed, mode);
    let a_u: Vec<&[f64]> = unit.iter().map(|p| &p[..d]).collect();
    let b_u: Vec<&[f64]> = unit.iter().map(|p| &p[d..]).collect();
    let map = |rows: &[&[f64]]| -> Vec<ParameterVector> { rows.iter().map(|r| unit_to_space(space, r)).collect() };
    let a = map(&a_u);
    let b = map(&b_u);
    let cross = |base: &[ParameterVector], other: &[ParameterVector], v: usize| -> Vec<ParameterVector> {
        base.iter()
            .zip(other)
            .map(|(x, y)| {
                let mut p = x.clone();
                p.0[v] = y.0[v];
                p
            })
            .collect()
    };
    let ab = (0..d).map(|v| cross(&a, &b, v)).collect();
    let ba = (0..d).map(|v| cross(&b, &a, v)).collect();
    Ok(SaltelliDesign { n, a, b, ab, ba })
}

/// Outputs of a design: rows are design points, columns output components.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutputs {
    pub ya: Array2<f64>,
    pub yb: Array2<f64>,
    pub yab: Vec<Array2<f64>>,
}

/// Evaluates every design point and extracts an output vector (for example
/// one node's time series) from each field.
pub fn evaluate_design(
    surrogate: &dyn Surrogate,
    design: &SaltelliDesign,
    extract: &dyn Fn(&nalgebra::DMatrix<f64>) -> Vec<f64>,
    chunk: usize,
) -> Result<DesignOutputs, UqError> {
    let eval = |pts: &[ParameterVector]| -> Result<Array2<f64>, UqError> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
        for c in pts.chunks(chunk.max(1)) {
            for f in surrogate.evaluate(c)? {
                rows.push(extract(&f));
            }
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(UqError::Shape("extracted outputs differ in length".into()));
        }
        Ok(Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rectangular"))
    };
    // the B_A matrices are part of the design but not needed by these estimators
    Ok(DesignOutputs {
        ya: eval(&design.a)?,
        yb: eval(&design.b)?,
        yab: design.ab.iter().map(|m| eval(m)).collect::<Result<_, _>>()?,
    })
}

fn pooled_variance(ya: &[f64], yb: &[f64]) -> f64 {
    let n = (ya.len() + yb.len()) as f64;
    let mean = ya.iter().chain(yb).sum::<f64>() / n;
    ya.iter().chain(yb).map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn check_len(ya: &[f64], yb: &[f64], yab: &[f64]) -> Result<(), UqError> {
    if ya.len() != yb.len() || ya.len() != yab.len() || ya.is_empty() {
        return Err(UqError::Shape("estimator inputs must have equal, non-zero length".into()));
    }
    Ok(())
}

/// First-order index of one feature from `f(A)`, `f(B)`, `f(A_B)` values.
pub fn sobol_first(ya: &[f64], yb: &[f64], yab: &[f64]) -> Result<f64, UqError> {
    check_len(ya, yb, yab)?;
    let v = pooled_variance(ya, yb);
    if !(v > 0.0) {
        return Err(UqError::ZeroVariance { time_index: 0 });
    }
    let n = ya.len() as f64;
    Ok(yb.iter().zip(yab).zip(ya).map(|((b, ab), a)| b * (ab - a)).sum::<f64>() / n / v)
}

/// Total-effect index of one feature.
pub fn sobol_total(ya: &[f64], yb: &[f64], yab: &[f64]) -> Result<f64, UqError> {
    check_len(ya, yb, yab)?;
    let v = pooled_variance(ya, yb);
    if !(v > 0.0) {
        return Err(UqError::ZeroVariance { time_index: 0 });
    }
    let n = ya.len() as f64;
    Ok(0.5 * ya.iter().zip(yab).map(|(a, ab)| (a - ab).powi(2)).sum::<f64>() / n / v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolIndex {
    pub first: f64,
    pub first_conf: f64,
    pub total: f64,
    pub total_conf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SobolResult {
    pub n: usize,
    pub estimator: &'static str,
    /// `indices[v][i]`: feature `v` at output component `i`; `None` where
    /// the output variance is zero.
    pub indices: Vec<Vec<Option<SobolIndex>>>,
}

impl SobolResult {
    pub fn get(&self, feature: usize, component: usize) -> Option<SobolIndex> {
        self.indices[feature][component]
    }

    /// `feature,t_index,time,S,S_T,CI_low,CI_high,ST_CI_low,ST_CI_high`;
    /// undefined components have empty value fields.
    pub fn to_csv(&self, names: &[String], times: &[f64]) -> String {
        let mut out = String::from("feature,t_index,time,S,S_T,CI_low,CI_high,ST_CI_low,ST_CI_high\n");
        for (v, row) in self.indices.iter().enumerate() {
            for (i, idx) in row.iter().enumerate() {
                let t = times.get(i).copied().unwrap_or(i as f64);
                let name = names.get(v).cloned().unwrap_or_else(|| format!("x{}", v + 1));
                match idx {
                    Some(s) => out.push_str(&format!(
                        "{name},{i},{t:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                        s.first,
                        s.total,
                        s.first - s.first_conf,
                        s.first + s.first_conf,
                        s.total - s.total_conf,
                        s.total + s.total_conf
                    )),
                    None => out.push_str(&format!("{name},{i},{t:e},,,,,,\n")),
                }
            }
        }
        out
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Point estimates and bootstrap confidence half-widths for every feature
/// and output component.
pub fn analyze(outputs: &DesignOutputs, resamples: usize, seed: u64) -> Result<SobolResult, UqError> {
    let (n, width) = outputs.ya.dim();
    if outputs.yb.dim() != (n, width) || outputs.yab.iter().any(|m| m.dim() != (n, width)) {
        return Err(UqError::Shape("design outputs differ in shape".into()));
    }
    let mut rng = crate::seed::rng(seed);
    let boots: Vec<Vec<usize>> = (0..resamples)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();
    let mut indices = vec![vec![None; width]; outputs.yab.len()];
    for i in 0..width {
        let ya: Vec<f64> = outputs.ya.column(i).to_vec();
        let yb: Vec<f64> = outputs.yb.column(i).to_vec();
        if !(pooled_variance(&ya, &yb) > 0.0) {
            continue;
        }
        for (v, yab_m) in outputs.yab.iter().enumerate() {
            let yab: Vec<f64> = yab_m.column(i).to_vec();
            let first = sobol_first(&ya, &yb, &yab)?;
            let total = sobol_total(&ya, &yb, &yab)?;
            let mut bf = Vec::with_capacity(resamples);
            let mut bt = Vec::with_capacity(resamples);
            for idx in &boots {
                let pick = |y: &[f64]| idx.iter().map(|&k| y[k]).collect::<Vec<f64>>();
                let (a, b, ab) = (pick(&ya), pick(&yb), pick(&yab));
                // a resample can collapse to a constant; skip it
                if let (Ok(f), Ok(t)) = (sobol_first(&a, &b, &ab), sobol_total(&a, &b, &ab)) {
                    bf.push(f);
                    bt.push(t);
                }
            }
            let conf = |xs: &[f64]| if xs.len() < 2 { f64::NAN } else { Z_95 * std_dev(xs) };
            indices[v][i] = Some(SobolIndex {
                first,
                first_conf: conf(&bf),
                total,
                total_conf: conf(&bt),
            });
        }
    }
    Ok(SobolResult {
        n,
        estimator: "saltelli2010-first/jansen-total",
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfm::FeatureDistribution;
    use crate::uq::toys::{ishigami, ishigami_indices, ishigami_space};
    use crate::uq::FnSurrogate;
    use nalgebra::DMatrix;

    fn scalar(f: impl Fn(&[f64]) -> f64) -> impl Fn(&ParameterVector) -> DMatrix<f64> {
        move |t| DMatrix::from_element(1, 1, f(&t.0))
    }

    fn first_row(m: &DMatrix<f64>) -> Vec<f64> {
        m.row(0).iter().copied().collect()
    }

    fn unit_space(d: usize) -> ParameterSpace {
        ParameterSpace::new(
            (0..d).map(|i| format!("x{i}")).collect(),
            vec![FeatureDistribution::Uniform { lo: 0.0, hi: 1.0 }; d],
        )
        .unwrap()
    }

    #[test]
    fn design_structure() {
        let space = ParameterSpace::plate();
        let d = saltelli_sample(&space, 1024, 1, DesignMode::Sobol).unwrap();
        assert_eq!(d.len(), 10_240);
        assert_eq!(d.points().len(), 10_240);
        assert!(d.points().iter().all(|p| space.contains(p)));
        for v in 0..4 {
            for j in 0..d.n {
                for c in 0..4 {
                    let want = if c == v { d.b[j].0[c] } else { d.a[j].0[c] };
                    assert_eq!(d.ab[v][j].0[c], want);
                    let want = if c == v { d.a[j].0[c] } else { d.b[j].0[c] };
                    assert_eq!(d.ba[v][j].0[c], want);
                }
            }
        }
        assert!(saltelli_sample(&space, 1000, 1, DesignMode::Sobol).is_err());
        assert!(saltelli_sample(&space, 1000, 1, DesignMode::Random).is_ok());
        assert_eq!(saltelli_sample(&space, 64, 3, DesignMode::Sobol).unwrap(), saltelli_sample(&space, 64, 3, DesignMode::Sobol).unwrap());
    }

    #[test]
    fn symmetric_additive_model() {
        let space = unit_space(2);
        let d = saltelli_sample(&space, 4096, 2, DesignMode::Sobol).unwrap();
        let s = FnSurrogate(scalar(|x| x[0] + x[1]));
        let out = evaluate_design(&s, &d, &first_row, 256).unwrap();
        let res = analyze(&out, BOOTSTRAP_RESAMPLES, 5).unwrap();
        for v in 0..2 {
            let idx = res.get(v, 0).unwrap();
            assert!((idx.first - 0.5).abs() < 0.02, "{idx:?}");
            assert!((idx.first - idx.total).abs() <= idx.first_conf + idx.total_conf);
        }
    }

    #[test]
    fn inert_feature_has_zero_index() {
        let space = unit_space(3);
        let d = saltelli_sample(&space, 1024, 4, DesignMode::Sobol).unwrap();
        let s = FnSurrogate(scalar(|x| (3.0 * x[0]).sin() + x[1] * x[1]));
        let res = analyze(&evaluate_design(&s, &d, &first_row, 512).unwrap(), BOOTSTRAP_RESAMPLES, 1).unwrap();
        let idx = res.get(2, 0).unwrap();
        assert_eq!(idx.total, 0.0);
        assert!(idx.first.abs() <= idx.first_conf.max(1e-12));
    }

    #[test]
    fn ishigami_matches_closed_form() {
        let d = saltelli_sample(&ishigami_space(), 1024, 0, DesignMode::Sobol).unwrap();
        let s = FnSurrogate(scalar(|x| ishigami(x, 7.0, 0.1)));
        let res = analyze(&evaluate_design(&s, &d, &first_row, 1024).unwrap(), BOOTSTRAP_RESAMPLES, 0).unwrap();
        let (first, total) = ishigami_indices(7.0, 0.1);
        for v in 0..3 {
            let idx = res.get(v, 0).unwrap();
            assert!((idx.first - first[v]).abs() <= 0.03, "S{} = {}", v + 1, idx.first);
            assert!((idx.total - total[v]).abs() <= 0.03, "ST{} = {}", v + 1, idx.total);
            assert!(idx.total >= idx.first - idx.first_conf - idx.total_conf);
        }
        let sum_total: f64 = (0..3).map(|v| res.get(v, 0).unwrap().total).sum();
        let ci: f64 = (0..3).map(|v| res.get(v, 0).unwrap().total_conf).sum();
        assert!(sum_total >= 1.0 - ci);
    }

    #[test]
    fn constant_output_is_undefined() {
        let d = saltelli_sample(&unit_space(2), 8, 0, DesignMode::Sobol).unwrap();
        let s = FnSurrogate(scalar(|_| 4.0));
        let res = analyze(&evaluate_design(&s, &d, &first_row, 8).unwrap(), 10, 0).unwrap();
        assert!(res.get(0, 0).is_none());
        assert!(res.to_csv(&["a".into(), "b".into()], &[0.0]).contains("a,0,0e0,,,,,,"));
        assert!(matches!(sobol_first(&[1.0; 4], &[1.0; 4], &[1.0; 4]), Err(UqError::ZeroVariance { .. })));
    }
}
