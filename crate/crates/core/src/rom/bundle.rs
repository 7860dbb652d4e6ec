use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, Axis};
use sha2::{Digest, Sha256};

use super::RomError;
use crate::hfm::{ParameterVector, SnapshotMatrix};
use crate::io::{self, IoError, Meta};
use crate::nn::{Cae, Ffnn, Lstm, MinMax};

const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "rom-bundle-1";

/// Everything needed to predict a full field for a new parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RomBundle {
    /// Unpadded reduced basis, `N_h x rank`.
    pub basis: DMatrix<f64>,
    pub cae: Cae,
    pub lstm: Lstm,
    pub ffnn: Ffnn,
    /// Scaling of the padded reduced coordinates.
    pub coord_norm: MinMax,
    pub latent_norm: MinMax,
    pub theta_norm: MinMax,
    /// Scaling of the time input of the FFNN.
    pub time_norm: MinMax,
    /// Retained output times of the training snapshots.
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    /// Free-form provenance (config hash, seeds, stage metrics).
    pub provenance: Meta,
}

/// One predicted trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub snapshot: SnapshotMatrix,
    /// True if the parameter vector lies outside the training bounds.
    pub extrapolated: bool,
}

impl RomBundle {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n_h(&self) -> usize {
        self.basis.nrows()
    }

    pub fn padded(&self) -> usize {
        self.cae.input_len()
    }

    pub fn window(&self) -> usize {
        self.lstm.window()
    }

    pub fn latent_dim(&self) -> usize {
        self.cae.latent_dim()
    }

    pub fn parameter_dim(&self) -> usize {
        self.names.len()
    }

    /// Checks that the component dimensions agree with each other.
    pub fn validate(&self) -> Result<(), RomError> {
        let q = self.latent_dim();
        let xi = self.parameter_dim();
        let checks = [
            (self.rank() <= self.padded(), "basis rank exceeds the CAE input"),
            (self.coord_norm.dim() == self.padded(), "coordinate scaling width"),
            (self.lstm.latent_dim() == q, "LSTM latent width"),
            (self.ffnn.latent_dim() == q, "FFNN latent width"),
            (self.lstm.parameter_dim() == xi, "LSTM parameter width"),
            (self.ffnn.input_dim() == xi + 1, "FFNN input width"),
            (self.latent_norm.dim() == q, "latent scaling width"),
            (self.theta_norm.dim() == xi, "parameter scaling width"),
            (self.time_norm.dim() == 1, "time scaling width"),
            (self.bounds.len() == xi, "bounds width"),
            (self.times.len() >= 2, "fewer than two training times"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(RomError::Shape(format!("bundle inconsistent: {what}")));
            }
        }
        Ok(())
    }

    pub fn is_extrapolation(&self, theta: &ParameterVector) -> bool {
        theta
            .0
            .iter()
            .zip(&self.bounds)
            .any(|(&v, &(lo, hi))| v < lo || v > hi)
    }

    /// Output time of step `i`, extending the training grid uniformly.
    pub fn time_at(&self, i: usize) -> f64 {
        match self.times.get(i) {
            Some(&t) => t,
            None => {
                let dt = self.times[1] - self.times[0];
                self.times[0] + dt * i as f64
            }
        }
    }

    /// Scaled latent trajectories `(batch, n_t, q)`: FFNN for the first
    /// window, closed-loop LSTM afterwards.
    pub fn predict_latents(&self, thetas: &[ParameterVector], n_t: usize) -> Result<Array3<f64>, RomError> {
        let xi = self.parameter_dim();
        let (w, q, b) = (self.window(), self.latent_dim(), thetas.len());
        if let Some(t) = thetas.iter().find(|t| t.dim() != xi) {
            return Err(RomError::Shape(format!("parameter vector {t} has dimension != {xi}")));
        }
        let th = Array2::from_shape_fn((b, xi), |(r, c)| self.theta_norm.forward(c, thetas[r].0[c]));
        let head = n_t.min(w);
        let mut inputs = Array2::zeros((b * head, xi + 1));
        for r in 0..b {
            for i in 0..head {
                let row = r * head + i;
                inputs[[row, 0]] = self.time_norm.forward(0, self.time_at(i));
                inputs.slice_mut(s![row, 1..]).assign(&th.row(r));
            }
        }
        let first = self.ffnn.predict(inputs.view()).map_err(RomError::stage("ffnn"))?;
        let mut out = Array3::zeros((b, n_t, q));
        for r in 0..b {
            out.slice_mut(s![r, ..head, ..])
                .assign(&first.slice(s![r * head..(r + 1) * head, ..]));
        }
        if n_t > w {
            let rolled = self
                .lstm
                .rollout(out.slice(s![.., ..w, ..]), th.view(), n_t - w)
                .map_err(RomError::stage("lstm"))?;
            out.slice_mut(s![.., w.., ..]).assign(&rolled);
        }
        Ok(out)
    }

    /// Lifts scaled latents `(n_t, q)` to the full field `N_h x n_t`.
    pub fn decode_latents(&self, latents: &Array2<f64>) -> Result<DMatrix<f64>, RomError> {
        let raw = self.latent_norm.denormalize(latents.view());
        let coords_n = self.cae.decode(raw.view()).map_err(RomError::stage("cae"))?;
        let coords = self.coord_norm.denormalize(coords_n.view());
        let rank = self.rank();
        let c = DMatrix::from_fn(rank, coords.nrows(), |k, i| coords[[i, k]]);
        Ok(&self.basis * c)
    }

    pub fn predict(&self, theta: &ParameterVector, n_t: usize) -> Result<Prediction, RomError> {
        let mut all = self.predict_many(std::slice::from_ref(theta), n_t)?;
        Ok(all.pop().expect("one prediction per parameter"))
    }

    pub fn predict_many(&self, thetas: &[ParameterVector], n_t: usize) -> Result<Vec<Prediction>, RomError> {
        let latents = self.predict_latents(thetas, n_t)?;
        let times: Vec<f64> = (0..n_t).map(|i| self.time_at(i)).collect();
        thetas
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let values = self.decode_latents(&latents.index_axis(Axis(0), r).to_owned())?;
                Ok(Prediction {
                    snapshot: SnapshotMatrix::new(values, times.clone()),
                    extrapolated: self.is_extrapolation(t),
                })
            })
            .collect()
    }

    /// Scaled encoder latents `(N_t, q)` of a full-field snapshot.
    pub fn encode_snapshot(&self, snapshot: &DMatrix<f64>) -> Result<Array2<f64>, RomError> {
        if snapshot.nrows() != self.n_h() {
            return Err(RomError::Shape(format!(
                "snapshot has {} nodes, basis has {}",
                snapshot.nrows(),
                self.n_h()
            )));
        }
        let coords = self.basis.transpose() * snapshot;
        let n = self.padded();
        let rows = Array2::from_shape_fn((snapshot.ncols(), n), |(i, k)| {
            let v = if k < coords.nrows() { coords[(k, i)] } else { 0.0 };
            self.coord_norm.forward(k, v)
        });
        let z = self.cae.encode(rows.view()).map_err(RomError::stage("cae"))?;
        Ok(self.latent_norm.normalize(z.view()))
    }

    /// One-step LSTM predictions from true latent windows (diagnostics).
    pub fn teacher_forced(&self, latents: &Array2<f64>, theta: &ParameterVector) -> Result<Array2<f64>, RomError> {
        let th: Vec<f64> = self.theta_norm.normalize_row(&theta.0);
        let ds = crate::nn::build_sliding_windows(&[latents.view()], &[th], self.window())
            .map_err(RomError::stage("lstm"))?;
        self.lstm.predict(ds.inputs.view()).map_err(RomError::stage("lstm"))
    }

    pub fn save(&self, dir: &Path) -> Result<(), RomError> {
        self.validate()?;
        io::create_dir_all(dir)?;
        let mut m = Meta::new();
        m.set("format", FORMAT)
            .set("names", self.names.join(","))
            .set("lower", io::join_f64(&self.bounds.iter().map(|b| b.0).collect::<Vec<_>>()))
            .set("upper", io::join_f64(&self.bounds.iter().map(|b| b.1).collect::<Vec<_>>()))
            .set("times", io::join_f64(&self.times))
            .set("coord_norm", io::join_f64(&self.coord_norm.to_flat()))
            .set("latent_norm", io::join_f64(&self.latent_norm.to_flat()))
            .set("theta_norm", io::join_f64(&self.theta_norm.to_flat()))
            .set("time_norm", io::join_f64(&self.time_norm.to_flat()));
        for (k, v) in self.provenance.entries() {
            m.set(format!("provenance.{k}"), v);
        }
        m.write(&dir.join(MANIFEST))?;
        io::write_matrix(&dir.join("basis.roms"), &self.basis)?;
        let net = RomError::stage("checkpoint");
        self.cae.save(&dir.join("cae.ckpt")).map_err(net)?;
        self.lstm.save(&dir.join("lstm.ckpt")).map_err(net)?;
        self.ffnn.save(&dir.join("ffnn.ckpt")).map_err(net)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RomError> {
        let path = dir.join(MANIFEST);
        let m = Meta::read(&path)?;
        let format: String = m.require("format", &path)?;
        if format != FORMAT {
            return Err(IoError::BadValue {
                path,
                key: "format".into(),
                value: format,
            }
            .into());
        }
        let norm = |key: &str| -> Result<MinMax, RomError> {
            let flat = m.require_f64_list(key, &path)?;
            MinMax::from_flat(&flat).ok_or_else(|| {
                RomError::Io(IoError::BadValue {
                    path: path.clone(),
                    key: key.into(),
                    value: format!("{} values", flat.len()),
                })
            })
        };
        let names: String = m.require("names", &path)?;
        let lower = m.require_f64_list("lower", &path)?;
        let upper = m.require_f64_list("upper", &path)?;
        let mut provenance = Meta::new();
        for (k, v) in m.entries() {
            if let Some(stripped) = k.strip_prefix("provenance.") {
                provenance.set(stripped, v);
            }
        }
        let net = RomError::stage("checkpoint");
        let bundle = Self {
            basis: io::read_matrix(&dir.join("basis.roms"))?,
            cae: Cae::load(&dir.join("cae.ckpt")).map_err(net)?,
            lstm: Lstm::load(&dir.join("lstm.ckpt")).map_err(net)?,
            ffnn: Ffnn::load(&dir.join("ffnn.ckpt")).map_err(net)?,
            coord_norm: norm("coord_norm")?,
            latent_norm: norm("latent_norm")?,
            theta_norm: norm("theta_norm")?,
            time_norm: norm("time_norm")?,
            times: m.require_f64_list("times", &path)?,
            names: names.split(',').map(str::to_string).collect(),
            bounds: lower.into_iter().zip(upper).collect(),
            provenance,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// SHA-256 over the names and contents of every file in a bundle
/// directory, in sorted order.
pub fn bundle_hash(dir: &Path) -> Result<String, RomError> {
    let os = |source| IoError::Os {
        path: dir.to_path_buf(),
        source,
    };
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(os)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        let p = dir.join(&name);
        let bytes = std::fs::read(&p).map_err(|source| IoError::Os { path: p, source })?;
        h.update(name.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
