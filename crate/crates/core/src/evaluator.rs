//! Image-quality metrics, unseen-configuration sweeps and the task
//! similarity matrix built from hypernetwork hidden embeddings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coil_sim::{ComplexImage, DatasetManifest};
use crate::denoiser::DwpMode;
use crate::error::{Error, Result};
use crate::operators::zero_filled_recon;
use crate::task_codec::{embed_task, parse_bitstring, sample_config, TaskVector};
use crate::trainer::{prepare_sample, Checkpoint};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("image shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the images match.
pub fn psnr(pred: &Array2<f64>, gt: &Array2<f64>, data_range: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data range {data_range} must be positive")));
    }
    let mse = pred.iter().zip(gt.iter()).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(x: &Array2<f64>, win: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..SSIM_WINDOW).map(|k| win[k] * x[[i, j + k]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..SSIM_WINDOW).map(|k| win[k] * rows[[i + k, j]]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained 11x11 Gaussian
/// windows.
pub fn ssim(pred: &Array2<f64>, gt: &Array2<f64>, data_range: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let (h, w) = pred.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data range {data_range} must be positive")));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mu_x = filter_valid(pred, &win);
    let mu_y = filter_valid(gt, &win);
    let xx = filter_valid(&(pred * pred), &win);
    let yy = filter_valid(&(gt * gt), &win);
    let xy = filter_valid(&(pred * gt), &win);
    let mut total = 0.0;
    for idx in 0..mu_x.len() {
        let (mx, my) = (mu_x.as_slice().unwrap()[idx], mu_y.as_slice().unwrap()[idx]);
        let vx = xx.as_slice().unwrap()[idx] - mx * mx;
        let vy = yy.as_slice().unwrap()[idx] - my * my;
        let cxy = xy.as_slice().unwrap()[idx] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// PSNR and SSIM of `pred` against `gt` on magnitudes with
/// `data_range = max |gt|`.
pub fn image_metrics(pred: &ComplexImage, gt: &ComplexImage) -> Result<(f64, f64)> {
    let (p, g) = (pred.magnitude(), gt.magnitude());
    let range = g.iter().cloned().fold(0.0, f64::max);
    Ok((psnr(&p, &g, range)?, ssim(&p, &g, range)?))
}

/// A coil count (fresh random configuration per sample) or one fixed
/// configuration.
///
/// Parsed from text as a count when at most two characters long, otherwise
/// as a `0`/`1` bitstring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskSpec {
    Count(usize),
    Config(TaskVector),
}

impl TaskSpec {
    pub fn coils(&self) -> usize {
        match self {
            TaskSpec::Count(k) => *k,
            TaskSpec::Config(v) => v.popcount(),
        }
    }

    fn gamma_label(&self) -> String {
        match self {
            TaskSpec::Count(_) => "random".into(),
            TaskSpec::Config(v) => v.to_bitstring(),
        }
    }
}

impl std::str::FromStr for TaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() <= 2 {
            let k = s.parse().map_err(|_| Error::invalid(format!("bad coil count '{s}'")))?;
            if k == 0 {
                return Err(Error::invalid("coil count must be >= 1"));
            }
            Ok(TaskSpec::Count(k))
        } else {
            Ok(TaskSpec::Config(parse_bitstring(s)?))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub task: String,
    pub gamma: String,
    pub coils: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n: usize,
    pub zf_psnr_db: f64,
    pub zf_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn parse_db(s: &str) -> Option<f64> {
    if s == "inf" {
        Some(f64::INFINITY)
    } else {
        s.parse().ok()
    }
}

impl MetricsTable {
    pub fn row_for_coils(&self, coils: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.coils == coils)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,gamma,coils,psnr_db,ssim,n,zf_psnr_db,zf_ssim\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{},{:.6}",
                r.task,
                r.gamma,
                r.coils,
                fmt_db(r.psnr_db),
                r.ssim,
                r.n,
                fmt_db(r.zf_psnr_db),
                r.zf_ssim
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("task,gamma,coils,psnr_db,ssim,n,zf_psnr_db,zf_ssim") {
            return Err(Error::format(path, "unexpected header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::format(path, format!("bad row {}", i + 1));
            if f.len() != 8 {
                return Err(bad());
            }
            rows.push(MetricsRow {
                task: f[0].into(),
                gamma: f[1].into(),
                coils: f[2].parse().map_err(|_| bad())?,
                psnr_db: parse_db(f[3]).ok_or_else(bad)?,
                ssim: f[4].parse().map_err(|_| bad())?,
                n: f[5].parse().map_err(|_| bad())?,
                zf_psnr_db: parse_db(f[6]).ok_or_else(bad)?,
                zf_ssim: f[7].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { rows })
    }
}

/// Configuration draws for a coil count depend only on `(seed, k)`.
fn task_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

/// Reconstructs every sample under each task and reports mean metrics for
/// the model and the zero-filled baseline.
pub fn evaluate(
    ckpt: &Checkpoint,
    data: &DatasetManifest,
    tasks: &[TaskSpec],
    seed: u64,
    max_samples: Option<usize>,
) -> Result<MetricsTable> {
    let n = max_samples.map_or(data.len(), |m| m.min(data.len()));
    if n == 0 {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let model = &ckpt.model;
    model.config().denoiser.check_shape(data.shape[0], data.shape[1])?;
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].contains(t) {
            return Err(Error::invalid(format!("duplicate task {t:?}")));
        }
        let fits = match t {
            TaskSpec::Count(k) => *k <= data.n_coils,
            TaskSpec::Config(v) => v.n_coils() == data.n_coils,
        };
        if !fits {
            return Err(Error::invalid(format!("task {t:?} incompatible with {}-coil dataset", data.n_coils)));
        }
    }
    let samples = (0..n).map(|i| data.load_sample(i)).collect::<Result<Vec<_>>>()?;

    let mut table = MetricsTable::default();
    for spec in tasks {
        let mut rng = task_rng(seed, spec.coils());
        let (mut p, mut s, mut zp, mut zs) = (0.0, 0.0, 0.0, 0.0);
        for sample in &samples {
            let task = match spec {
                TaskSpec::Count(k) => sample_config(data.n_coils, *k, &mut rng)?,
                TaskSpec::Config(v) => v.clone(),
            };
            let prep = prepare_sample(sample, &task)?;
            let e = ckpt.protocol().conditioning(&task)?;
            let (pred, _) = model.forward(&prep.kspace, &prep.sens, &task, &e)?;
            let zf = zero_filled_recon(&prep.kspace, &prep.sens, &task)?;
            let (mp, ms) = image_metrics(&pred, &prep.target)?;
            let (zfp, zfs) = image_metrics(&zf, &prep.target)?;
            p += mp;
            s += ms;
            zp += zfp;
            zs += zfs;
        }
        let inv = 1.0 / n as f64;
        table.rows.push(MetricsRow {
            task: format!("k{}@{}x", spec.coils(), data.acceleration),
            gamma: spec.gamma_label(),
            coils: spec.coils(),
            psnr_db: p * inv,
            ssim: s * inv,
            n,
            zf_psnr_db: zp * inv,
            zf_ssim: zs * inv,
        });
    }
    Ok(table)
}

/// Pairwise `1 - cos` between task embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMatrix {
    pub labels: Vec<String>,
    pub values: Array2<f64>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

impl SimMatrix {
    pub fn from_embeddings(labels: Vec<String>, embeddings: &[Vec<f64>]) -> Self {
        let t = embeddings.len();
        let mut values = Array2::zeros((t, t));
        for i in 0..t {
            for j in i + 1..t {
                let d = cosine_distance(&embeddings[i], &embeddings[j]);
                values[[i, j]] = d;
                values[[j, i]] = d;
            }
        }
        Self { labels, values }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean over all pairs `(i, i + offset)`.
    pub fn mean_offset(&self, offset: usize) -> Option<f64> {
        let t = self.len();
        if offset == 0 || offset >= t {
            return None;
        }
        let sum: f64 = (0..t - offset).map(|i| self.values[[i, i + offset]]).sum();
        Some(sum / (t - offset) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for v in self.values.row(i) {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Binary PGM heatmap, `cell` pixels per entry; 0 is black, 2 white.
    pub fn write_pgm(&self, path: &Path, cell: usize) -> Result<()> {
        let t = self.len();
        let side = t * cell.max(1);
        let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
        for y in 0..side {
            for x in 0..side {
                let v = self.values[[y / cell.max(1), x / cell.max(1)]];
                bytes.push((v / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Similarity between explicit configurations, using the bottleneck
/// hypernetwork's second hidden layer.
pub fn task_similarity(ckpt: &Checkpoint, tasks: &[TaskVector]) -> Result<SimMatrix> {
    let embeddings = tasks.iter().map(|t| hidden_embedding(ckpt, t)).collect::<Result<Vec<_>>>()?;
    Ok(SimMatrix::from_embeddings(tasks.iter().map(|t| t.to_bitstring()).collect(), &embeddings))
}

/// Similarity between coil counts: each count is represented by the mean
/// embedding of `per_count` random configurations.
pub fn similarity_by_count(ckpt: &Checkpoint, n_c: usize, counts: &[usize], per_count: usize, seed: u64) -> Result<SimMatrix> {
    if per_count == 0 {
        return Err(Error::invalid("need at least one configuration per count"));
    }
    let mut embeddings = Vec::with_capacity(counts.len());
    for &k in counts {
        let mut rng = task_rng(seed, k);
        let mut mean: Vec<f64> = Vec::new();
        for _ in 0..per_count {
            let tau = hidden_embedding(ckpt, &sample_config(n_c, k, &mut rng)?)?;
            if mean.is_empty() {
                mean = vec![0.0; tau.len()];
            }
            mean.iter_mut().zip(&tau).for_each(|(m, t)| *m += t / per_count as f64);
        }
        embeddings.push(mean);
    }
    Ok(SimMatrix::from_embeddings(counts.iter().map(|k| format!("k{k}")).collect(), &embeddings))
}

fn hidden_embedding(ckpt: &Checkpoint, task: &TaskVector) -> Result<Vec<f64>> {
    let cfg = &ckpt.model.config().denoiser;
    if cfg.dwp_mode == DwpMode::None {
        return Err(Error::invalid("task similarity needs a model with dynamic weight prediction"));
    }
    let bottleneck = cfg.levels - 1;
    let (_, tau) = ckpt.model.denoiser(0).hypernet_forward(&ckpt.model.params, &embed_task(task)?, bottleneck)?;
    Ok(tau.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((h, w), || rng.gen_range(0.0..1.0))
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random(16, 16, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_error() {
        let a = random(16, 16, 1);
        let b = &a + 0.1;
        assert!((psnr(&b, &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_mismatch() {
        assert!(psnr(&random(4, 4, 0), &random(4, 5, 0), 1.0).is_err());
        assert!(psnr(&random(4, 4, 0), &random(4, 4, 0), 0.0).is_err());
    }

    #[test]
    fn ssim_basics() {
        let a = random(24, 20, 2);
        let b = random(24, 20, 3);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 1.0).unwrap();
        assert!((ab - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-9);
        assert!((-1.0..1.0).contains(&ab));
        assert!(ssim(&random(10, 20, 0), &random(10, 20, 0), 1.0).is_err());
    }

    #[test]
    fn sim_matrix_properties() {
        let emb = vec![vec![1.0, 0.0, 0.5], vec![0.2, 1.0, 0.1], vec![-1.0, 0.3, 0.0]];
        let m = SimMatrix::from_embeddings(vec!["a".into(), "b".into(), "c".into()], &emb);
        for i in 0..3 {
            assert_eq!(m.values[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(m.values[[i, j]], m.values[[j, i]]);
                assert!((0.0..=2.0).contains(&m.values[[i, j]]));
            }
        }
        assert_eq!(m.mean_offset(3), None);
    }

    #[test]
    fn task_spec_parsing() {
        assert_eq!("11".parse::<TaskSpec>().unwrap(), TaskSpec::Count(11));
        assert_eq!("110".parse::<TaskSpec>().unwrap().coils(), 2);
        assert!("0".parse::<TaskSpec>().is_err());
        assert!("1x1".parse::<TaskSpec>().is_err());
    }

    #[test]
    fn metrics_csv_round_trip() {
        let table = MetricsTable {
            rows: vec![MetricsRow {
                task: "k5@5x".into(),
                gamma: "random".into(),
                coils: 5,
                psnr_db: f64::INFINITY,
                ssim: 0.5,
                n: 3,
                zf_psnr_db: 20.5,
                zf_ssim: 0.25,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        table.write_csv(&p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().contains(",inf,"));
        assert_eq!(MetricsTable::read_csv(&p).unwrap(), table);
    }
}
