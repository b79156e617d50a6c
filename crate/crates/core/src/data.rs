//! Paired `(x, y)` samples, synthetic generators and the dataset CSV format.
//!
//! File layout:
//!
//! ```text
//! # mdn-dataset v1 N=2 M=1
//! y1,x1,x2
//! ...
//! ```
//!
//! The first line is the only header; every following line is one sample with
//! the `M` conditions first and the `N` targets after them. Values are written
//! with 17 significant digits, which reproduces every finite `f64` exactly.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MdnError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{stream_rng, DATA_STREAM};
use crate::scalar::Real;

/// `B` paired samples with targets `x ∈ ℝᴺ` and conditions `y ∈ ℝᴹ`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedBatch<T> {
    n: usize,
    m: usize,
    x: Vec<T>,
    y: Vec<T>,
}

impl<T: Real> ConditionedBatch<T> {
    /// Builds a batch from flat row-major buffers.
    pub fn from_flat(n: usize, m: usize, x: Vec<T>, y: Vec<T>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(MdnError::InvalidInput("N and M must be at least 1".into()));
        }
        if x.len() % n != 0 {
            return Err(MdnError::shape("target buffer", (x.len() / n + 1) * n, x.len()));
        }
        let b = x.len() / n;
        if y.len() != b * m {
            return Err(MdnError::shape("condition buffer", b * m, y.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(MdnError::InvalidInput("dataset entries must be finite".into()));
        }
        Ok(Self { n, m, x, y })
    }

    /// Builds a batch from per-sample rows.
    pub fn from_rows(xs: &[Vec<T>], ys: &[Vec<T>]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(MdnError::shape("batch rows", xs.len(), ys.len()));
        }
        let n = xs.first().map_or(0, Vec::len);
        let m = ys.first().map_or(0, Vec::len);
        if let Some(r) = xs.iter().find(|r| r.len() != n) {
            return Err(MdnError::shape("target row", n, r.len()));
        }
        if let Some(r) = ys.iter().find(|r| r.len() != m) {
            return Err(MdnError::shape("condition row", m, r.len()));
        }
        Self::from_flat(n, m, xs.concat(), ys.concat())
    }

    pub fn empty(n: usize, m: usize) -> Result<Self> {
        Self::from_flat(n, m, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.n
    }

    pub fn y_dim(&self) -> usize {
        self.m
    }

    pub fn x(&self, i: usize) -> &[T] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn y(&self, i: usize) -> &[T] {
        &self.y[i * self.m..(i + 1) * self.m]
    }

    pub fn xs(&self) -> &[T] {
        &self.x
    }

    pub fn ys(&self) -> &[T] {
        &self.y
    }

    /// Conditions (`|indices| × M`) and targets (`|indices| × N`) of the selected rows.
    pub fn gather(&self, indices: &[usize]) -> (DenseMatrix<T>, DenseMatrix<T>) {
        let mut ys = Vec::with_capacity(indices.len() * self.m);
        let mut xs = Vec::with_capacity(indices.len() * self.n);
        for &i in indices {
            ys.extend_from_slice(self.y(i));
            xs.extend_from_slice(self.x(i));
        }
        (
            DenseMatrix::new(indices.len(), self.m, ys).expect("gathered conditions"),
            DenseMatrix::new(indices.len(), self.n, xs).expect("gathered targets"),
        )
    }

    /// Splits into the first `at` rows and the rest.
    pub fn split_at(&self, at: usize) -> (Self, Self) {
        let at = at.min(self.len());
        let head = Self {
            n: self.n,
            m: self.m,
            x: self.x[..at * self.n].to_vec(),
            y: self.y[..at * self.m].to_vec(),
        };
        let tail = Self {
            n: self.n,
            m: self.m,
            x: self.x[at * self.n..].to_vec(),
            y: self.y[at * self.m..].to_vec(),
        };
        (head, tail)
    }

    /// Same samples in another scalar type.
    pub fn cast<U: Real>(&self) -> ConditionedBatch<U> {
        let conv = |v: &T| U::lit(v.to_f64_lossy());
        ConditionedBatch {
            n: self.n,
            m: self.m,
            x: self.x.iter().map(conv).collect(),
            y: self.y.iter().map(conv).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Generator {
    /// `y ~ U[0, π)`, `x ~ N(0, R(y)·diag(1, aspect)·R(y)ᵀ)`.
    RotatingGaussian { aspect: f64 },
    /// `y ~ U[0, 2π)` rotates `modes` equally weighted isotropic Gaussians on a circle.
    MixtureRing { modes: usize, radius: f64, noise: f64 },
    /// `y ∈ {0, 1}` picks the upper or lower moon.
    TwoMoonsConditional { noise: f64 },
}

impl Generator {
    pub const NAMES: [&'static str; 3] = ["rotating_gaussian", "two_moons_conditional", "mixture_ring"];

    pub fn name(&self) -> &'static str {
        match self {
            Generator::RotatingGaussian { .. } => "rotating_gaussian",
            Generator::MixtureRing { .. } => "mixture_ring",
            Generator::TwoMoonsConditional { .. } => "two_moons_conditional",
        }
    }

    /// Generator `name` with its default shape parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "rotating_gaussian" => Ok(Generator::RotatingGaussian { aspect: 0.01 }),
            "mixture_ring" => Ok(Generator::MixtureRing {
                modes: 4,
                radius: 3.0,
                noise: 0.1,
            }),
            "two_moons_conditional" => Ok(Generator::TwoMoonsConditional { noise: 0.1 }),
            other => Err(MdnError::InvalidInput(format!(
                "unknown generator `{other}` (valid: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(MdnError::InvalidInput(format!("{}: {msg}", self.name())));
        match *self {
            Generator::RotatingGaussian { aspect } if !(aspect > 0.0 && aspect <= 1.0) => bad("aspect must lie in (0, 1]"),
            Generator::MixtureRing { modes, .. } if modes < 2 => bad("needs at least 2 modes"),
            Generator::MixtureRing { radius, .. } if !(radius.is_finite() && radius > 0.0) => bad("radius must be positive"),
            Generator::MixtureRing { noise, .. } | Generator::TwoMoonsConditional { noise }
                if !(noise.is_finite() && noise >= 0.0) =>
            {
                bad("noise must be non-negative")
            }
            _ => Ok(()),
        }
    }

    /// Target dimension `N`.
    pub fn x_dim(&self) -> usize {
        2
    }

    /// Condition dimension `M`.
    pub fn y_dim(&self) -> usize {
        1
    }
}

impl FromStr for Generator {
    type Err = MdnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::by_name(s)
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub samples: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(MdnError::InvalidInput("sample count must be at least 1".into()));
        }
        self.generator.validate()
    }

    pub fn generate<T: Real>(&self) -> Result<ConditionedBatch<T>> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, DATA_STREAM);
        let mut x = Vec::with_capacity(2 * self.samples);
        let mut y = Vec::with_capacity(self.samples);
        for _ in 0..self.samples {
            let (yi, xi) = match self.generator {
                Generator::RotatingGaussian { aspect } => {
                    let angle = rng.random_range(0.0..std::f64::consts::PI);
                    (angle, rotating_gaussian_draw(angle, aspect, &mut rng))
                }
                Generator::MixtureRing { modes, radius, noise } => {
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let mode = rng.random_range(0..modes);
                    let c = ring_center(phase, mode, modes, radius);
                    let e = normal_pair(&mut rng);
                    (phase, [c[0] + noise * e[0], c[1] + noise * e[1]])
                }
                Generator::TwoMoonsConditional { noise } => {
                    let label = rng.random_range(0..2u8);
                    let t = rng.random_range(0.0..std::f64::consts::PI);
                    let arc = moon_point(label, t);
                    let e = normal_pair(&mut rng);
                    (f64::from(label), [arc[0] + noise * e[0], arc[1] + noise * e[1]])
                }
            };
            y.push(T::lit(yi));
            x.extend(xi.iter().map(|&v| T::lit(v)));
        }
        ConditionedBatch::from_flat(2, 1, x, y)
    }
}

fn normal_pair<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

fn rotating_gaussian_draw<R: Rng + ?Sized>(angle: f64, aspect: f64, rng: &mut R) -> [f64; 2] {
    let e = normal_pair(rng);
    let (s, c) = angle.sin_cos();
    let (a, b) = (e[0], aspect.sqrt() * e[1]);
    [c * a - s * b, s * a + c * b]
}

/// Center of ring mode `mode` at phase `phase`.
pub fn ring_center(phase: f64, mode: usize, modes: usize, radius: f64) -> [f64; 2] {
    let angle = phase + std::f64::consts::TAU * mode as f64 / modes as f64;
    [radius * angle.cos(), radius * angle.sin()]
}

/// Noise-free point on moon `label` at arc parameter `t ∈ [0, π)`.
///
/// Moon 0 is the upper unit arc around `(0, 0)`, moon 1 the lower unit arc around `(1, 0.5)`.
pub fn moon_point(label: u8, t: f64) -> [f64; 2] {
    let (s, c) = t.sin_cos();
    if label == 0 {
        [c, s]
    } else {
        [1.0 - c, 0.5 - s]
    }
}

/// `R(y)·diag(1, aspect)·R(y)ᵀ`.
pub fn rotating_gaussian_covariance(angle: f64, aspect: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [
        [c * c + aspect * s * s, (1.0 - aspect) * s * c],
        [(1.0 - aspect) * s * c, s * s + aspect * c * c],
    ]
}

/// `count` rotating-Gaussian targets at a fixed condition `angle`.
pub fn rotating_gaussian_at<T: Real>(angle: f64, aspect: f64, count: usize, seed: u64) -> Result<ConditionedBatch<T>> {
    Generator::RotatingGaussian { aspect }.validate()?;
    let mut rng = stream_rng(seed, DATA_STREAM);
    let mut x = Vec::with_capacity(2 * count);
    for _ in 0..count {
        x.extend(rotating_gaussian_draw(angle, aspect, &mut rng).map(T::lit));
    }
    ConditionedBatch::from_flat(2, 1, x, vec![T::lit(angle); count])
}

fn header_line(n: usize, m: usize) -> String {
    format!("# mdn-dataset v1 N={n} M={m}")
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = || MdnError::parse(1, format!("malformed header `{}`", line.trim_end()));
    let rest = line.trim().strip_prefix("# mdn-dataset v1").ok_or_else(bad)?;
    let mut n = None;
    let mut m = None;
    for tok in rest.split_whitespace() {
        let (key, val) = tok.split_once('=').ok_or_else(bad)?;
        let val: usize = val.parse().map_err(|_| bad())?;
        match key {
            "N" if n.is_none() => n = Some(val),
            "M" if m.is_none() => m = Some(val),
            _ => return Err(bad()),
        }
    }
    match (n, m) {
        (Some(n), Some(m)) if n > 0 && m > 0 => Ok((n, m)),
        _ => Err(bad()),
    }
}

/// Writes `batch` in the dataset CSV format.
pub fn write_dataset<T: Real, W: Write>(batch: &ConditionedBatch<T>, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", header_line(batch.n, batch.m))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut record = Vec::with_capacity(batch.n + batch.m);
    for i in 0..batch.len() {
        record.clear();
        record.extend(batch.y(i).iter().chain(batch.x(i)).map(|v| format!("{:.16e}", v.to_f64_lossy())));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> MdnError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => MdnError::Io(e),
        other => MdnError::Io(io::Error::other(format!("{other:?}"))),
    }
}

/// Parses the dataset CSV format.
///
/// A file consisting only of the header is an empty batch; a file without a
/// header is an error.
pub fn read_dataset<T: Real, R: Read>(input: R) -> Result<ConditionedBatch<T>> {
    let mut input = BufReader::new(input);
    let mut header = String::new();
    if input.read_line(&mut header)? == 0 {
        return Err(MdnError::parse(1, "empty dataset file (missing header)"));
    }
    let (n, m) = parse_header(&header)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize + 1);
            MdnError::parse(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != n + m {
            return Err(MdnError::parse(
                line,
                format!("row has {} fields, header declares N={n} M={m} ({} fields)", record.len(), n + m),
            ));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| MdnError::parse(line, format!("column {}: `{cell}` is not a number", col + 1)))?;
            let v = T::from_f64(v).filter(|v| v.is_finite()).ok_or_else(|| {
                MdnError::parse(line, format!("column {}: `{cell}` is not finite", col + 1))
            })?;
            if col < m {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    ConditionedBatch::from_flat(n, m, x, y)
}

/// Saves to `path`, or to stdout when `path` is `-`.
pub fn save_dataset<T: Real>(batch: &ConditionedBatch<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path == Path::new("-") {
        write_dataset(batch, io::stdout().lock())
    } else {
        write_dataset(batch, File::create(path)?)
    }
}

/// Loads from `path`, or from stdin when `path` is `-`.
pub fn load_dataset<T: Real>(path: impl AsRef<Path>) -> Result<ConditionedBatch<T>> {
    let path = path.as_ref();
    if path == Path::new("-") {
        read_dataset(io::stdin().lock())
    } else {
        read_dataset(File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(b: &ConditionedBatch<f64>) -> ConditionedBatch<f64> {
        let mut buf = Vec::new();
        write_dataset(b, &mut buf).unwrap();
        read_dataset(buf.as_slice()).unwrap()
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact_for_awkward_values() {
        let vals = [
            -0.0,
            0.0,
            f64::MIN_POSITIVE,
            5e-324,
            -2.2250738585072e-309,
            f64::MAX,
            f64::MIN,
            0.1,
            1.0 / 3.0,
            std::f64::consts::PI,
            -1e300,
            123456789.123456789,
        ];
        let b = ConditionedBatch::from_flat(2, 1, vals.to_vec(), vals[..6].to_vec()).unwrap();
        let r = roundtrip(&b);
        assert_eq!(bits(r.xs()), bits(b.xs()));
        assert_eq!(bits(r.ys()), bits(b.ys()));
    }

    #[test]
    fn round_trip_generated() {
        let spec = DatasetSpec {
            generator: Generator::by_name("mixture_ring").unwrap(),
            samples: 500,
            seed: 3,
        };
        let b: ConditionedBatch<f64> = spec.generate().unwrap();
        let r = roundtrip(&b);
        assert_eq!(bits(r.xs()), bits(b.xs()));
        assert_eq!(bits(r.ys()), bits(b.ys()));
    }

    #[test]
    fn f32_round_trip() {
        let b = ConditionedBatch::<f32>::from_flat(1, 1, vec![0.1, -3.5e-40], vec![1e30, -0.0]).unwrap();
        let mut buf = Vec::new();
        write_dataset(&b, &mut buf).unwrap();
        let r: ConditionedBatch<f32> = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(r, b);
        assert!(r.y(1)[0].is_sign_negative());
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = read_dataset::<f64, _>(&b""[..]).unwrap_err();
        assert!(matches!(err, MdnError::Parse { line: 1, .. }));
    }

    #[test]
    fn header_only_is_empty_batch() {
        let b = read_dataset::<f64, _>(&b"# mdn-dataset v1 N=2 M=1\n"[..]).unwrap();
        assert!(b.is_empty());
        assert_eq!((b.x_dim(), b.y_dim()), (2, 1));
    }

    #[test]
    fn wrong_row_length_names_line() {
        let text = "# mdn-dataset v1 N=2 M=1\n1,2,3\n1,2,3,4\n";
        match read_dataset::<f64, _>(text.as_bytes()).unwrap_err() {
            MdnError::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("4 fields"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_header_and_cells() {
        assert!(matches!(
            read_dataset::<f64, _>(&b"y,x1,x2\n1,2,3\n"[..]),
            Err(MdnError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_dataset::<f64, _>(&b"# mdn-dataset v1 N=2\n"[..]),
            Err(MdnError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_dataset::<f64, _>(&b"# mdn-dataset v1 N=1 M=1\n1,2\n1,abc\n"[..]),
            Err(MdnError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            read_dataset::<f64, _>(&b"# mdn-dataset v1 N=1 M=1\n1,inf\n"[..]),
            Err(MdnError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn generators_are_seed_deterministic() {
        for name in Generator::NAMES {
            let spec = DatasetSpec {
                generator: Generator::by_name(name).unwrap(),
                samples: 200,
                seed: 11,
            };
            let a: ConditionedBatch<f64> = spec.generate().unwrap();
            let b: ConditionedBatch<f64> = spec.generate().unwrap();
            assert_eq!(bits(a.xs()), bits(b.xs()));
            let c: ConditionedBatch<f64> = DatasetSpec { seed: 12, ..spec }.generate().unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn generator_validation() {
        assert!(Generator::RotatingGaussian { aspect: 0.0 }.validate().is_err());
        assert!(Generator::RotatingGaussian { aspect: 1.5 }.validate().is_err());
        assert!(Generator::MixtureRing {
            modes: 1,
            radius: 1.0,
            noise: 0.0
        }
        .validate()
        .is_err());
        assert!(Generator::TwoMoonsConditional { noise: -1.0 }.validate().is_err());
        let err = Generator::by_name("bogus").unwrap_err().to_string();
        assert!(Generator::NAMES.iter().all(|n| err.contains(n)));
    }

    #[test]
    fn gather_and_split() {
        let b = ConditionedBatch::from_rows(
            &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            &[vec![0.1], vec![0.2], vec![0.3]],
        )
        .unwrap();
        let (ys, xs) = b.gather(&[2, 0]);
        assert_eq!(ys.as_slice(), &[0.3, 0.1]);
        assert_eq!(xs.as_slice(), &[5.0, 6.0, 1.0, 2.0]);
        let (a, c) = b.split_at(1);
        assert_eq!((a.len(), c.len()), (1, 2));
        assert_eq!(c.x(0), &[3.0, 4.0]);
    }
}
