//! Raw samples, embedding vectors and the embedder.
//!
//! The built-in embedder is a fitted linear projection onto the directions of
//! maximal variance of the standardized training samples. Externally computed
//! embeddings enter through the `FDMS` binary vector file plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::codec::{self, ByteReader};
use crate::error::{Error, Result};

/// Default embedding dimensionality.
pub const DEFAULT_DIM: usize = 32;

/// Relative eigenvalue floor below which a direction counts as zero variance.
const RANK_TOLERANCE: f64 = 1e-10;

/// One raw sample: a flat tensor with a declared shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub shape: Vec<usize>,
    pub payload: Vec<f32>,
    #[serde(default)]
    pub source: String,
}

impl RawSample {
    pub fn new(id: impl Into<String>, shape: Vec<usize>, payload: Vec<f32>, source: impl Into<String>) -> Result<Self> {
        let sample = Self {
            id: id.into(),
            shape,
            payload,
            source: source.into(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().product();
        if self.shape.is_empty() || expected != self.payload.len() {
            return Err(Error::InvalidSample {
                id: self.id.clone(),
                reason: format!(
                    "payload length {} does not match shape {:?}",
                    self.payload.len(),
                    self.shape
                ),
            });
        }
        if self.payload.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample {
                id: self.id.clone(),
                reason: "payload contains non-finite values".into(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

/// A fixed-dimension latent vector. Values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { id: String::new() });
        }
        Ok(Self(values))
    }

    /// Builds from `f64` values, rounding to `f32`.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    BuiltinProjection,
    External,
}

/// Fitted parameters of the built-in projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `output_dim` rows, each of flattened input length. Zero rows are padding.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component.
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub input_shape: Vec<usize>,
    pub output_dim: usize,
    pub params: Option<ProjectionParams>,
    pub fitted_on: usize,
    pub version: u64,
    /// Set when the training data had rank below `output_dim`; trailing
    /// directions are zero-padded.
    #[serde(default)]
    pub degenerate: bool,
}

impl EmbedderSpec {
    /// Spec for deployments whose embeddings are computed out of band.
    pub fn external(output_dim: usize, version: u64) -> Self {
        Self {
            kind: EmbedderKind::External,
            input_shape: Vec::new(),
            output_dim,
            params: None,
            fitted_on: 0,
            version,
            degenerate: false,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Fits the built-in projection embedder. The returned spec has version
/// `previous_version + 1`.
pub fn fit_embedder(samples: &[RawSample], output_dim: usize, previous_version: u64) -> Result<EmbedderSpec> {
    let first = samples.first().ok_or(Error::EmptyInput)?;
    if output_dim == 0 {
        return Err(Error::InvalidArgument("output_dim must be positive".into()));
    }
    for s in samples {
        if s.shape != first.shape {
            return Err(Error::ShapeMismatch {
                expected: first.shape.clone(),
                found: s.shape.clone(),
            });
        }
        s.validate()?;
    }
    let n = samples.len();
    let p = first.len();

    let mut mean = vec![0.0f64; p];
    for s in samples {
        for (m, &x) in mean.iter_mut().zip(&s.payload) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = vec![0.0f64; p];
    for s in samples {
        for ((v, &x), m) in var.iter_mut().zip(&s.payload).zip(&mean) {
            let d = f64::from(x) - m;
            *v += d * d;
        }
    }
    // Zero-variance features keep scale 1.
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / n as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let z = DMatrix::from_fn(n, p, |i, j| (f64::from(samples[i].payload[j]) - mean[j]) / scale[j]);
    let (eigvals, directions) = principal_directions(&z);

    let max_eig = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let floor = max_eig * RANK_TOLERANCE;
    let mut components = Vec::with_capacity(output_dim);
    let mut explained = Vec::with_capacity(output_dim);
    for (lambda, dir) in eigvals.iter().zip(directions) {
        if components.len() == output_dim {
            break;
        }
        if *lambda <= floor || *lambda <= f64::MIN_POSITIVE {
            break;
        }
        components.push(canonical_sign(dir));
        explained.push(*lambda);
    }
    let degenerate = components.len() < output_dim;
    while components.len() < output_dim {
        components.push(vec![0.0; p]);
        explained.push(0.0);
    }

    Ok(EmbedderSpec {
        kind: EmbedderKind::BuiltinProjection,
        input_shape: first.shape.clone(),
        output_dim,
        params: Some(ProjectionParams {
            mean,
            scale,
            components,
            explained_variance: explained,
        }),
        fitted_on: n,
        version: previous_version + 1,
        degenerate,
    })
}

/// Eigen-decomposition of the sample covariance of the centered rows of `z`,
/// sorted by descending eigenvalue. Uses the Gram matrix when there are more
/// features than samples.
fn principal_directions(z: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, p) = z.shape();
    let nf = n as f64;
    if p <= n {
        let cov = (z.transpose() * z) / nf;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let dirs = order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        (vals, dirs)
    } else {
        let gram = (z * z.transpose()) / nf;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut vals = Vec::with_capacity(n);
        let mut dirs = Vec::with_capacity(n);
        for i in order {
            let lambda = eig.eigenvalues[i];
            let u = eig.eigenvectors.column(i);
            // v = Zᵀu / ‖Zᵀu‖ shares eigenvalue λ with the covariance.
            let v = z.transpose() * u;
            let norm = v.norm();
            vals.push(lambda);
            if norm > 0.0 && lambda > 0.0 {
                dirs.push(v.iter().map(|x| x / norm).collect());
            } else {
                dirs.push(vec![0.0; p]);
            }
        }
        (vals, dirs)
    }
}

/// First component with magnitude above noise is made positive.
fn canonical_sign(mut dir: Vec<f64>) -> Vec<f64> {
    let peak = dir.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let tol = peak * 1e-9;
    if let Some(first) = dir.iter().find(|x| x.abs() > tol) {
        if *first < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
    }
    dir
}

/// Projects one sample. Pure and bit-reproducible for a given spec.
pub fn embed(spec: &EmbedderSpec, sample: &RawSample) -> Result<EmbeddingVector> {
    let params = match (&spec.kind, &spec.params) {
        (EmbedderKind::BuiltinProjection, Some(params)) => params,
        _ => {
            return Err(Error::InvalidArgument(
                "external embedder cannot embed raw samples".into(),
            ))
        }
    };
    if sample.shape != spec.input_shape {
        return Err(Error::ShapeMismatch {
            expected: spec.input_shape.clone(),
            found: sample.shape.clone(),
        });
    }
    sample.validate()?;
    let z: Vec<f64> = sample
        .payload
        .iter()
        .zip(params.mean.iter().zip(&params.scale))
        .map(|(&x, (m, s))| (f64::from(x) - m) / s)
        .collect();
    let out: Vec<f32> = params
        .components
        .iter()
        .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() as f32)
        .collect();
    EmbeddingVector::new(out).map_err(|_| Error::NonFiniteValue { id: sample.id.clone() })
}

// ---------------------------------------------------------------------------
// External embedding files
// ---------------------------------------------------------------------------

/// One row of an embedding manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub row: u64,
    pub sample_id: String,
    #[serde(default)]
    pub source: String,
}

/// Sidecar describing an `FDMS` vector file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    /// Path of the vector file, relative to the manifest's directory.
    pub vector_file: String,
    pub dim: u32,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbedding {
    pub id: String,
    pub source: String,
    pub vector: EmbeddingVector,
}

/// Encodes vectors (all of one dimension) into the `FDMS` binary layout.
pub fn encode_vectors(vectors: &[&[f32]], dim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(codec::HEADER_LEN + vectors.len() * dim * 4);
    codec::write_header(&mut out, vectors.len() as u64, dim as u32);
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        codec::put_f32s(&mut out, v);
    }
    Ok(out)
}

/// Decodes an `FDMS` vector file into `(dim, rows)`. Finiteness is not checked here.
pub fn decode_vectors(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    let mut reader = ByteReader::new(bytes);
    let (count, dim) = codec::read_header(&mut reader)?;
    let dim = dim as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        rows.push(reader.f32s(dim)?);
    }
    if !reader.is_empty() {
        return Err(Error::format(
            reader.offset(),
            format!("{} trailing bytes after {count} vectors", reader.remaining()),
        ));
    }
    Ok((dim, rows))
}

/// Writes `vectors_path` in the binary format and a manifest alongside it.
pub fn write_external_embeddings(
    manifest_path: &Path,
    vectors_path: &Path,
    items: &[ExternalEmbedding],
) -> Result<()> {
    let dim = items.first().map(|e| e.vector.dim()).unwrap_or(0);
    let rows: Vec<&[f32]> = items.iter().map(|e| e.vector.values()).collect();
    let bytes = encode_vectors(&rows, dim)?;
    fs::write(vectors_path, bytes)?;

    let manifest_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let vector_file = vectors_path
        .strip_prefix(manifest_dir)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| vectors_path.to_path_buf());
    let manifest = EmbeddingManifest {
        vector_file: vector_file.to_string_lossy().into_owned(),
        dim: dim as u32,
        entries: items
            .iter()
            .enumerate()
            .map(|(row, e)| ManifestEntry {
                row: row as u64,
                sample_id: e.id.clone(),
                source: e.source.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(manifest_path, text)?;
    Ok(())
}

/// Reads a manifest and its vector file. `expected_dim` is the current index
/// dimension, or `None` when the store is empty.
pub fn ingest_external_embeddings(manifest_path: &Path, expected_dim: Option<usize>) -> Result<Vec<ExternalEmbedding>> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: EmbeddingManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(e.column() as u64, format!("manifest: {e}")))?;
    let vector_path: PathBuf = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.vector_file);
    let bytes = fs::read(&vector_path)?;
    embeddings_from_parts(&manifest, &bytes, expected_dim)
}

/// Joins a parsed manifest with vector-file bytes, validating both.
pub fn embeddings_from_parts(
    manifest: &EmbeddingManifest,
    bytes: &[u8],
    expected_dim: Option<usize>,
) -> Result<Vec<ExternalEmbedding>> {
    let (dim, rows) = decode_vectors(bytes)?;
    if dim != manifest.dim as usize {
        return Err(Error::format(
            16,
            format!("vector file dim {dim} disagrees with manifest dim {}", manifest.dim),
        ));
    }
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(Error::DimMismatch { expected, found: dim });
        }
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let row = rows.get(entry.row as usize).ok_or_else(|| {
            Error::format(
                (codec::HEADER_LEN + entry.row as usize * dim * 4) as u64,
                format!("manifest row {} beyond {} vectors", entry.row, rows.len()),
            )
        })?;
        let vector = EmbeddingVector::new(row.clone()).map_err(|_| Error::NonFiniteValue {
            id: entry.sample_id.clone(),
        })?;
        out.push(ExternalEmbedding {
            id: entry.sample_id.clone(),
            source: entry.source.clone(),
            vector,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, values: Vec<f32>) -> RawSample {
        let n = values.len();
        RawSample::new(id, vec![n], values, "test").unwrap()
    }

    #[test]
    fn fitted_mean_embeds_to_zero() {
        let samples: Vec<RawSample> = (0..20)
            .map(|i| sample(&i.to_string(), vec![i as f32, (i * i) as f32 * 0.1, 3.0 - i as f32 * 0.5]))
            .collect();
        let spec = fit_embedder(&samples, 2, 0).unwrap();
        let mean: Vec<f32> = spec.params.as_ref().unwrap().mean.iter().map(|&m| m as f32).collect();
        let v = embed(&spec, &sample("mean", mean)).unwrap();
        for x in v.values() {
            assert!(x.abs() < 1e-5, "{x}");
        }
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let samples: Vec<RawSample> = (0..4).map(|i| sample(&i.to_string(), vec![1.0, 2.0, 3.0])).collect();
        let spec = fit_embedder(&samples, 1, 0).unwrap();
        assert!(spec.degenerate);
        let v = embed(&spec, &sample("x", vec![5.0, -1.0, 2.0])).unwrap();
        assert_eq!(v.values(), &[0.0]);
    }

    #[test]
    fn few_samples_pad_with_zero_directions() {
        let samples: Vec<RawSample> = (0..5)
            .map(|i| {
                let mut v = vec![0.0f32; 12];
                v[i] = 1.0 + i as f32;
                v[11] = i as f32 * 0.3;
                sample(&i.to_string(), v)
            })
            .collect();
        let spec = fit_embedder(&samples, 10, 3).unwrap();
        assert!(spec.degenerate);
        assert_eq!(spec.version, 4);
        let params = spec.params.as_ref().unwrap();
        // 5 points span at most 4 centered directions.
        for row in &params.components[4..] {
            assert!(row.iter().all(|&x| x == 0.0));
        }
        let v = embed(&spec, &samples[2]).unwrap();
        assert_eq!(v.dim(), 10);
        assert!(v.values()[5..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_errors() {
        let a = sample("a", vec![1.0, 2.0]);
        let b = sample("b", vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_embedder(&[a.clone(), b.clone()], 1, 0), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(fit_embedder(&[], 1, 0), Err(Error::EmptyInput)));
        let spec = fit_embedder(&[a.clone(), sample("c", vec![0.0, 1.0])], 1, 0).unwrap();
        assert!(matches!(embed(&spec, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn components_have_positive_leading_entry() {
        let samples: Vec<RawSample> = (0..30)
            .map(|i| {
                let t = i as f32;
                sample(&i.to_string(), vec![-t, 2.0 * t, (t * 0.7).sin(), (t * 1.3).cos()])
            })
            .collect();
        let spec = fit_embedder(&samples, 3, 0).unwrap();
        for row in &spec.params.unwrap().components {
            let first = row.iter().find(|x| x.abs() > 1e-9).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn identity_projection_returns_standardized_input() {
        // Two features with independent variance: the projection is a signed
        // permutation of the standardized coordinates.
        let samples: Vec<RawSample> = [(-1.0, 0.0), (1.0, 0.0), (0.0, -3.0), (0.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| sample(&i.to_string(), vec![a, b]))
            .collect();
        let spec = fit_embedder(&samples, 2, 0).unwrap();
        let params = spec.params.as_ref().unwrap();
        let x = sample("q", vec![0.5, 1.5]);
        let z = [
            (0.5 - params.mean[0]) / params.scale[0],
            (1.5 - params.mean[1]) / params.scale[1],
        ];
        let v = embed(&spec, &x).unwrap().to_f64();
        let mut got: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let mut want: Vec<f64> = z.iter().map(|x| x.abs()).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_vector_rejects_nan() {
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(serde_json::from_str::<EmbeddingVector>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn wide_inputs_use_gram_path() {
        // 6 samples of 400 features.
        let samples: Vec<RawSample> = (0..6)
            .map(|i| {
                let v: Vec<f32> = (0..400).map(|j| ((i * 31 + j * 7) % 13) as f32).collect();
                sample(&i.to_string(), v)
            })
            .collect();
        let spec = fit_embedder(&samples, 3, 0).unwrap();
        let params = spec.params.unwrap();
        for row in &params.components[..3] {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        let dot: f64 = params.components[0].iter().zip(&params.components[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
    }

    #[test]
    fn decode_rejects_truncation() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
        let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let bytes = encode_vectors(&refs, 4).unwrap();
        let cut = &bytes[..bytes.len() - 6];
        match decode_vectors(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20 + 2 * 16),
            other => panic!("unexpected {other:?}"),
        }
    }
}
