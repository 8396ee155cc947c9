//! On-disk formats: `.taf` feature matrices, `.tal` label vectors and the
//! JSON dataset manifest, plus a synthetic distribution-shift generator.
//!
//! `.taf` layout (little-endian): `b"TAF1"`, `count: u32`, `dim: u32`, then
//! `count * dim` `f32` values row-major. `.tal` layout: `b"TAL1"`,
//! `count: u32`, then `count` `i32` labels where `-1` means unknown.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaeaError};
use crate::numerics::{norm, renormalize_row, Matrix, Rng};

pub const FEATURE_MAGIC: &[u8; 4] = b"TAF1";
pub const LABEL_MAGIC: &[u8; 4] = b"TAL1";
const FEATURE_HEADER_LEN: u64 = 12;
const LABEL_HEADER_LEN: u64 = 8;

/// Stored rows must have a norm inside this band.
pub const ROW_NORM_BAND: (f32, f32) = (0.99, 1.01);

fn read_u32(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
}

/// Count and dimension read from a `.taf` header, after size validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub count: usize,
    pub dim: usize,
}

pub fn read_feature_header(path: &Path) -> Result<FeatureHeader> {
    let mut file = File::open(path).map_err(|e| TaeaError::io(path, e))?;
    let mut header = [0u8; 12];
    let got = read_up_to(&mut file, &mut header).map_err(|e| TaeaError::io(path, e))?;
    if got < 4 || &header[..4] != FEATURE_MAGIC {
        return Err(TaeaError::Format {
            path: path.into(),
            msg: format!("expected magic {:?}", std::str::from_utf8(FEATURE_MAGIC).unwrap()),
        });
    }
    if got < 12 {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: format!("header truncated at {got} bytes"),
        });
    }
    let count = read_u32(&header[4..8]) as usize;
    let dim = read_u32(&header[8..12]) as usize;
    let expected = FEATURE_HEADER_LEN + 4 * count as u64 * dim as u64;
    let actual = file
        .metadata()
        .map_err(|e| TaeaError::io(path, e))?
        .len();
    if actual != expected {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: format!("{count}x{dim} payload needs {expected} bytes, file has {actual}"),
        });
    }
    Ok(FeatureHeader { count, dim })
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Reads a `.taf` file. Rows come back with unit L2 norm.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let header = read_feature_header(path)?;
    let bytes = fs::read(path).map_err(|e| TaeaError::io(path, e))?;
    let payload = &bytes[FEATURE_HEADER_LEN as usize..];
    if payload.len() != 4 * header.count * header.dim {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: "payload changed size while reading".into(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(TaeaError::Numeric(format!(
            "{}: value {} (row {}, col {}) is not finite",
            path.display(),
            data[i],
            i / header.dim.max(1),
            i % header.dim.max(1)
        )));
    }
    let mut m = Matrix::new(header.count, header.dim, data)?;
    for r in 0..m.rows() {
        let n = norm(m.row(r));
        if !(ROW_NORM_BAND.0..=ROW_NORM_BAND.1).contains(&n) {
            return Err(TaeaError::Corrupt {
                path: path.into(),
                msg: format!("row {r} has norm {n}, expected unit rows"),
            });
        }
        renormalize_row(m.row_mut(r))?;
    }
    Ok(m)
}

/// Writes `m` as a `.taf` file. Rows that are not unit norm are normalized
/// first; nothing is written if any value is non-finite.
pub fn write_feature_file(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    if !m.is_finite() {
        return Err(TaeaError::Numeric(format!(
            "refusing to write non-finite features to {}",
            path.display()
        )));
    }
    let mut rows = m.clone();
    for r in 0..rows.rows() {
        renormalize_row(rows.row_mut(r))?;
    }
    let count = u32::try_from(rows.rows())
        .map_err(|_| TaeaError::Range(format!("{} rows exceed u32", rows.rows())))?;
    let dim = u32::try_from(rows.cols())
        .map_err(|_| TaeaError::Range(format!("{} columns exceed u32", rows.cols())))?;

    let file = File::create(path).map_err(|e| TaeaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| TaeaError::io(path, e));
    write(FEATURE_MAGIC)?;
    write(&count.to_le_bytes())?;
    write(&dim.to_le_bytes())?;
    for v in rows.as_slice() {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| TaeaError::io(path, e))
}

/// Ground-truth labels; `None` marks an unknown label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels(Vec<i32>);

impl Labels {
    pub fn new(raw: Vec<i32>) -> Self {
        Labels(raw)
    }

    pub fn unknown(count: usize) -> Self {
        Labels(vec![-1; count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        usize::try_from(self.0[i]).ok()
    }

    pub fn raw(&self) -> &[i32] {
        &self.0
    }
}

pub fn load_label_file(path: impl AsRef<Path>) -> Result<Labels> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TaeaError::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != LABEL_MAGIC {
        return Err(TaeaError::Format {
            path: path.into(),
            msg: format!("expected magic {:?}", std::str::from_utf8(LABEL_MAGIC).unwrap()),
        });
    }
    if bytes.len() < LABEL_HEADER_LEN as usize {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: "header truncated".into(),
        });
    }
    let count = read_u32(&bytes[4..8]) as usize;
    let payload = &bytes[LABEL_HEADER_LEN as usize..];
    if payload.len() != 4 * count {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: format!("{count} labels need {} payload bytes, found {}", 4 * count, payload.len()),
        });
    }
    let raw: Vec<i32> = payload
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(bad) = raw.iter().find(|&&l| l < -1) {
        return Err(TaeaError::Corrupt {
            path: path.into(),
            msg: format!("label {bad} is neither a class index nor -1"),
        });
    }
    Ok(Labels(raw))
}

pub fn write_label_file(path: impl AsRef<Path>, labels: &Labels) -> Result<()> {
    let path = path.as_ref();
    let count = u32::try_from(labels.len())
        .map_err(|_| TaeaError::Range(format!("{} labels exceed u32", labels.len())))?;
    let mut bytes = Vec::with_capacity(8 + 4 * labels.len());
    bytes.extend_from_slice(LABEL_MAGIC);
    bytes.extend_from_slice(&count.to_le_bytes());
    for l in labels.raw() {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| TaeaError::io(path, e))
}

/// `manifest.json` as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub dataset_name: String,
    pub dim: usize,
    pub classes: Vec<String>,
    pub image_features: String,
    pub labels: String,
    pub text_features: String,
}

/// A validated manifest with paths resolved against its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub dataset_name: String,
    pub dim: usize,
    pub classes: Vec<String>,
    pub image_features: PathBuf,
    pub labels: PathBuf,
    pub text_features: PathBuf,
    /// Number of test samples in the image-feature file.
    pub n_samples: usize,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn load_images(&self) -> Result<Matrix> {
        load_feature_file(&self.image_features)
    }

    pub fn load_text(&self) -> Result<Matrix> {
        load_feature_file(&self.text_features)
    }

    pub fn load_labels(&self) -> Result<Labels> {
        load_label_file(&self.labels)
    }
}

/// Parses and validates a manifest. Feature headers and sizes, label values
/// and class counts are all checked before returning.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TaeaError::io(path, e))?;
    let raw: ManifestFile = serde_json::from_str(&text).map_err(|e| TaeaError::Schema {
        path: path.into(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    if raw.classes.len() < 2 {
        return Err(TaeaError::Consistency(format!(
            "{} class(es) listed, at least 2 required",
            raw.classes.len()
        )));
    }
    if raw.dim == 0 {
        return Err(TaeaError::Consistency("dim must be positive".into()));
    }

    let image_features = resolve(&raw.image_features);
    let text_features = resolve(&raw.text_features);
    let labels_path = resolve(&raw.labels);

    let images = read_feature_header(&image_features)?;
    let text_h = read_feature_header(&text_features)?;
    if text_h.count != raw.classes.len() {
        return Err(TaeaError::Consistency(format!(
            "{} has {} rows but the manifest lists {} classes",
            text_features.display(),
            text_h.count,
            raw.classes.len()
        )));
    }
    for (what, h, p) in [
        ("image", images, &image_features),
        ("text", text_h, &text_features),
    ] {
        if h.dim != raw.dim {
            return Err(TaeaError::Consistency(format!(
                "{what} features {} have dim {}, manifest says {}",
                p.display(),
                h.dim,
                raw.dim
            )));
        }
    }
    let labels = load_label_file(&labels_path)?;
    if labels.len() != images.count {
        return Err(TaeaError::Consistency(format!(
            "{} labels for {} image features",
            labels.len(),
            images.count
        )));
    }
    if let Some(bad) = labels.raw().iter().find(|&&l| l >= raw.classes.len() as i32) {
        return Err(TaeaError::Consistency(format!(
            "label {bad} is out of range for {} classes",
            raw.classes.len()
        )));
    }

    Ok(Manifest {
        path: path.to_path_buf(),
        dataset_name: raw.dataset_name,
        dim: raw.dim,
        classes: raw.classes,
        image_features,
        labels: labels_path,
        text_features,
        n_samples: images.count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    None,
    Rotation,
    MeanDrift,
    Noise,
    Composite,
}

/// A synthetic covariate shift applied to image features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub angle_rad: f32,
    pub drift_scale: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn none() -> Self {
        Self {
            kind: ShiftKind::None,
            angle_rad: 0.0,
            drift_scale: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn rotation(angle_rad: f32, seed: u64) -> Self {
        Self {
            kind: ShiftKind::Rotation,
            angle_rad,
            seed,
            ..Self::none()
        }
    }

    /// Coordinate plane `(i, j)`, `i < j`, used by the rotation for `dim` columns.
    pub fn rotation_plane(&self, dim: usize) -> (usize, usize) {
        let mut rng = Rng::new(self.seed);
        plane_from(&mut rng, dim)
    }

    fn rotates(&self) -> bool {
        matches!(self.kind, ShiftKind::Rotation | ShiftKind::Composite)
    }

    fn drifts(&self) -> bool {
        matches!(self.kind, ShiftKind::MeanDrift | ShiftKind::Composite)
    }

    fn adds_noise(&self) -> bool {
        matches!(self.kind, ShiftKind::Noise | ShiftKind::Composite)
    }
}

fn plane_from(rng: &mut Rng, dim: usize) -> (usize, usize) {
    assert!(dim >= 2, "rotation needs at least two dimensions");
    let i = rng.below(dim);
    let mut j = rng.below(dim - 1);
    if j >= i {
        j += 1;
    }
    (i.min(j), i.max(j))
}

/// Givens rotation of every row by `angle` in coordinate plane `(i, j)`.
pub fn rotate_in_plane(features: &Matrix, i: usize, j: usize, angle: f32) -> Matrix {
    let (s, c) = angle.sin_cos();
    let mut out = features.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let (xi, xj) = (row[i], row[j]);
        row[i] = c * xi - s * xj;
        row[j] = s * xi + c * xj;
    }
    out
}

/// Applies `shift` (rotation, then drift, then noise) and re-normalizes rows.
pub fn apply_shift(features: &Matrix, shift: &ShiftSpec) -> Result<Matrix> {
    if !features.is_finite() {
        return Err(TaeaError::Numeric("apply_shift input is not finite".into()));
    }
    let dim = features.cols();
    let mut out = features.clone();
    if features.is_empty() {
        return Ok(out);
    }
    let mut rng = Rng::new(shift.seed);
    if dim >= 2 {
        let (i, j) = plane_from(&mut rng, dim);
        if shift.rotates() {
            out = rotate_in_plane(&out, i, j, shift.angle_rad);
        }
    }
    let drift_dir = rng.unit_vector(dim);
    if shift.drifts() {
        for r in 0..out.rows() {
            for (x, u) in out.row_mut(r).iter_mut().zip(&drift_dir) {
                *x += shift.drift_scale * u;
            }
        }
    }
    if shift.adds_noise() {
        for x in out.as_mut_slice() {
            *x += shift.noise_sigma * rng.normal();
        }
    }
    out.normalize_rows()
}

/// Parameters of the synthetic benchmark generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub n_samples: usize,
    pub intra_class_sigma: f32,
    pub shift: ShiftSpec,
    pub seed: u64,
}

pub const SYNTH_IMAGES: &str = "images.taf";
pub const SYNTH_LABELS: &str = "labels.tal";
pub const SYNTH_TEXT: &str = "text.taf";
pub const MANIFEST_FILE: &str = "manifest.json";

/// In-memory synthetic dataset: prototypes double as the text features.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub prototypes: Matrix,
    pub images: Matrix,
    pub labels: Labels,
}

/// Draws prototypes on the unit sphere, samples `prototype + N(0, σ²I)` with
/// round-robin class assignment, then applies the shift.
pub fn synth_data(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n_classes < 2 {
        return Err(TaeaError::Parameter("synthetic data needs at least 2 classes".into()));
    }
    if spec.dim < 2 {
        return Err(TaeaError::Parameter("synthetic data needs dim >= 2".into()));
    }
    if spec.n_samples < spec.n_classes {
        return Err(TaeaError::Parameter(format!(
            "{} samples cannot cover {} classes",
            spec.n_samples, spec.n_classes
        )));
    }
    if !(spec.intra_class_sigma >= 0.0) {
        return Err(TaeaError::Parameter("intra-class sigma must be >= 0".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let prototypes = rng.unit_rows(spec.n_classes, spec.dim);
    let mut raw = Vec::with_capacity(spec.n_samples * spec.dim);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let c = i % spec.n_classes;
        for &p in prototypes.row(c) {
            raw.push(p + spec.intra_class_sigma * rng.normal());
        }
        labels.push(c as i32);
    }
    let raw = Matrix::new(spec.n_samples, spec.dim, raw)?;
    let images = apply_shift(&raw, &spec.shift)?;
    Ok(SynthData {
        prototypes,
        images,
        labels: Labels(labels),
    })
}

/// Generates a synthetic dataset under `out_dir` and returns the manifest path.
pub fn synth_generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let data = synth_data(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| TaeaError::io(out_dir, e))?;
    write_feature_file(out_dir.join(SYNTH_TEXT), &data.prototypes)?;
    write_feature_file(out_dir.join(SYNTH_IMAGES), &data.images)?;
    write_label_file(out_dir.join(SYNTH_LABELS), &data.labels)?;
    let manifest = ManifestFile {
        dataset_name: format!(
            "synthetic-c{}-d{}-n{}-s{}",
            spec.n_classes, spec.dim, spec.n_samples, spec.seed
        ),
        dim: spec.dim,
        classes: (0..spec.n_classes).map(|c| format!("class_{c}")).collect(),
        image_features: SYNTH_IMAGES.into(),
        labels: SYNTH_LABELS.into(),
        text_features: SYNTH_TEXT.into(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    write_manifest(&path, &manifest)?;
    Ok(path)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &ManifestFile) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TaeaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, manifest)
        .map_err(|e| TaeaError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| TaeaError::io(path, e))?;
    w.flush().map_err(|e| TaeaError::io(path, e))
}

/// Reads a raw manifest without validation, e.g. for editing.
pub fn read_manifest_file(path: impl AsRef<Path>) -> Result<ManifestFile> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| TaeaError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| TaeaError::Schema {
        path: path.into(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // TAF1, count=2, dim=2, rows (1,0) and (0,1).
    const IDENTITY_TAF: &str = "54414631 02000000 02000000 0000803f 00000000 00000000 0000803f";

    fn hex_bytes(s: &str) -> Vec<u8> {
        let s: String = s.split_whitespace().collect();
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    #[test]
    fn loads_hand_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("id.taf");
        fs::write(&p, hex_bytes(IDENTITY_TAF)).unwrap();
        let m = load_feature_file(&p).unwrap();
        assert_eq!(m, Matrix::identity(2));
    }

    #[test]
    fn empty_file_is_legal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.taf");
        fs::write(&p, hex_bytes("54414631 00000000 08000000")).unwrap();
        let m = load_feature_file(&p).unwrap();
        assert_eq!(m.shape(), (0, 8));

        let q = dir.path().join("w.taf");
        write_feature_file(&q, &Matrix::empty(5)).unwrap();
        assert_eq!(fs::metadata(&q).unwrap().len(), 12);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.taf");
        fs::write(&p, b"XXXX\x01\0\0\0\x01\0\0\0\0\0\x80\x3f").unwrap();
        assert!(matches!(load_feature_file(&p), Err(TaeaError::Format { .. })));

        let mut bytes = hex_bytes(IDENTITY_TAF);
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_feature_file(&p), Err(TaeaError::Corrupt { .. })));
    }

    #[test]
    fn non_finite_payload_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.taf");
        fs::write(&p, hex_bytes("54414631 01000000 01000000 0000c07f")).unwrap();
        assert!(matches!(load_feature_file(&p), Err(TaeaError::Numeric(_))));
    }

    #[test]
    fn unnormalized_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.taf");
        // one row (2, 0)
        fs::write(&p, hex_bytes("54414631 01000000 02000000 00000040 00000000")).unwrap();
        assert!(matches!(load_feature_file(&p), Err(TaeaError::Corrupt { .. })));
    }

    #[test]
    fn write_rejects_nan_without_creating_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.taf");
        let m = Matrix::from_rows(&[[1.0, f32::NAN]]).unwrap();
        assert!(matches!(write_feature_file(&p, &m), Err(TaeaError::Numeric(_))));
        assert!(!p.exists());
    }

    #[test]
    fn round_trip_unit_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.taf");
        let m = Rng::new(5).unit_rows(3, 4);
        write_feature_file(&p, &m).unwrap();
        let back = load_feature_file(&p).unwrap();
        assert_eq!(
            m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn label_round_trip_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.tal");
        let labels = Labels::new(vec![0, 3, -1, 2]);
        write_label_file(&p, &labels).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 8 + 16);
        let back = load_label_file(&p).unwrap();
        assert_eq!(back, labels);
        assert_eq!(back.get(2), None);
        assert_eq!(back.get(1), Some(3));

        fs::write(&p, b"TAF1\0\0\0\0").unwrap();
        assert!(matches!(load_label_file(&p), Err(TaeaError::Format { .. })));
    }

    #[test]
    fn identity_rotation_in_two_dims() {
        let m = Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let r = rotate_in_plane(&m, 0, 1, std::f32::consts::FRAC_PI_2);
        assert!(r.get(0, 0).abs() < 1e-6 && (r.get(0, 1) - 1.0).abs() < 1e-6);

        let spec = ShiftSpec::rotation(std::f32::consts::FRAC_PI_2, 99);
        assert_eq!(spec.rotation_plane(2), (0, 1));
        let r = apply_shift(&m, &spec).unwrap();
        assert!(r.get(0, 0).abs() < 1e-6 && (r.get(0, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn null_shift_keeps_unit_rows() {
        let m = Rng::new(1).unit_rows(20, 6);
        let spec = ShiftSpec {
            kind: ShiftKind::Composite,
            ..ShiftSpec::none()
        };
        let out = apply_shift(&m, &spec).unwrap();
        assert!(out.max_abs_diff(&m) < 1e-6);
    }

    #[test]
    fn rotation_preserves_inner_products() {
        let mut rng = Rng::new(11);
        let m = rng.matrix_uniform(10, 7, -1.0, 1.0);
        let r = rotate_in_plane(&m, 2, 5, 0.9);
        for a in 0..m.rows() {
            for b in 0..m.rows() {
                let before = crate::numerics::dot(m.row(a), m.row(b));
                let after = crate::numerics::dot(r.row(a), r.row(b));
                assert!((before - after).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn synth_rejects_bad_parameters() {
        let spec = SynthSpec {
            n_classes: 1,
            dim: 4,
            n_samples: 10,
            intra_class_sigma: 0.1,
            shift: ShiftSpec::none(),
            seed: 0,
        };
        assert!(synth_data(&spec).is_err());
        assert!(synth_data(&SynthSpec { n_classes: 5, n_samples: 4, ..spec }).is_err());
        assert!(synth_data(&SynthSpec { n_classes: 2, dim: 1, ..spec }).is_err());
    }

    #[test]
    fn synth_assigns_classes_round_robin() {
        let spec = SynthSpec {
            n_classes: 3,
            dim: 4,
            n_samples: 8,
            intra_class_sigma: 0.1,
            shift: ShiftSpec::none(),
            seed: 2,
        };
        let d = synth_data(&spec).unwrap();
        assert_eq!(d.labels.raw(), &[0, 1, 2, 0, 1, 2, 0, 1]);
    }
}
