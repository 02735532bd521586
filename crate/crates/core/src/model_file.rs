//! Binary model container.
//!
//! All integers and floats are little-endian. Matrices are stored row-major.
//!
//! ```text
//! magic        8 bytes  "SKLADLMF"
//! version      u32      1
//! k, m, c      u64 ×3   atoms, feature dimension, classes
//! config       alpha f64, beta f64, ridge_delta f64, k_nn u64,
//!              kernel tag u8 (0 auto, 1 fixed) + width f64,
//!              t0 u64, dict_size u64, epsilon f64, max_iter u64, seed u64,
//!              laplacian u8 (0 unnormalized, 1 symmetric-normalized)
//! omega        k×m f64
//! r            k×k f64
//! classifier   c×k f64
//! history      count u64, then per record:
//!              recon f64, sparsity u64, laplacian f64, total f64, convergence f64
//! class names  count u64, then per name: length u32 + UTF-8 bytes
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::graph::{KernelWidth, LaplacianMode};
use crate::trainer::{IterationRecord, Objective, SkladlModel, TrainConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SKLADLMF";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &SkladlModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(model.dict_size() as u64);
    w.u64(model.feature_dim() as u64);
    w.u64(model.num_classes() as u64);

    let c = &model.config;
    w.f64(c.alpha);
    w.f64(c.beta);
    w.f64(c.ridge_delta);
    w.u64(c.k_nn as u64);
    match c.kernel_width {
        KernelWidth::Auto => {
            w.u8(0);
            w.f64(0.0);
        }
        KernelWidth::Fixed(v) => {
            w.u8(1);
            w.f64(v);
        }
    }
    w.u64(c.t0 as u64);
    w.u64(c.dict_size as u64);
    w.f64(c.epsilon);
    w.u64(c.max_iter as u64);
    w.u64(c.seed);
    w.u8(match c.laplacian_mode {
        LaplacianMode::Unnormalized => 0,
        LaplacianMode::SymmetricNormalized => 1,
    });

    w.matrix(&model.omega);
    w.matrix(&model.r);
    w.matrix(&model.classifier);

    w.u64(model.history.len() as u64);
    for h in &model.history {
        w.f64(h.objective.recon);
        w.u64(h.objective.sparsity as u64);
        w.f64(h.objective.laplacian);
        w.f64(h.objective.total);
        w.f64(h.convergence);
    }
    w.u64(model.class_names.len() as u64);
    for name in &model.class_names {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<SkladlModel> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(Error::Truncated("magic".into()))
        } else {
            Err(Error::BadMagic)
        };
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let k = r.usize("header")?;
    let m = r.usize("header")?;
    let c = r.usize("header")?;

    let alpha = r.f64("config")?;
    let beta = r.f64("config")?;
    let ridge_delta = r.f64("config")?;
    let k_nn = r.usize("config")?;
    let kernel_tag = r.u8("config")?;
    let width = r.f64("config")?;
    let kernel_width = match kernel_tag {
        0 => KernelWidth::Auto,
        1 => KernelWidth::Fixed(width),
        t => return Err(Error::Malformed(format!("unknown kernel width tag {t}"))),
    };
    let t0 = r.usize("config")?;
    let dict_size = r.usize("config")?;
    let epsilon = r.f64("config")?;
    let max_iter = r.usize("config")?;
    let seed = r.u64("config")?;
    let laplacian_mode = match r.u8("config")? {
        0 => LaplacianMode::Unnormalized,
        1 => LaplacianMode::SymmetricNormalized,
        t => return Err(Error::Malformed(format!("unknown laplacian mode {t}"))),
    };

    let omega = r.matrix(k, m, "omega")?;
    let synth = r.matrix(k, k, "r")?;
    let classifier = r.matrix(c, k, "classifier")?;

    let count = r.usize("history")?;
    r.need(count.saturating_mul(40), "history")?;
    let mut history = Vec::with_capacity(count);
    for _ in 0..count {
        let recon = r.f64("history")?;
        let sparsity = r.usize("history")?;
        let laplacian = r.f64("history")?;
        let total = r.f64("history")?;
        let convergence = r.f64("history")?;
        history.push(IterationRecord {
            objective: Objective {
                recon,
                sparsity,
                laplacian,
                total,
            },
            convergence,
        });
    }

    let names = r.usize("class names")?;
    r.need(names.saturating_mul(4), "class names")?;
    let mut class_names = Vec::with_capacity(names);
    for _ in 0..names {
        let len = r.u32("class names")? as usize;
        let raw = r.take(len, "class names")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Malformed("class name is not UTF-8".into()))?;
        class_names.push(name.to_string());
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    Ok(SkladlModel {
        omega,
        r: synth,
        classifier,
        config: TrainConfig {
            alpha,
            beta,
            ridge_delta,
            k_nn,
            kernel_width,
            t0,
            dict_size,
            epsilon,
            max_iter,
            seed,
            laplacian_mode,
        },
        history,
        class_names,
    })
}

pub fn save_model(model: &SkladlModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SkladlModel> {
    from_bytes(&fs::read(path)?)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        for row in m.row_iter() {
            for v in row.iter() {
                self.f64(*v);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize, what: &str) -> Result<()> {
        if self.buf.len() - self.pos < n {
            Err(Error::Truncated(what.to_string()))
        } else {
            Ok(())
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.need(n, what)?;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::Malformed(format!("{what}: value exceeds usize")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Malformed(format!("{what}: dimensions overflow")))?;
        self.need(len, what)?;
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64(what)?;
            }
        }
        Ok(m)
    }
}
