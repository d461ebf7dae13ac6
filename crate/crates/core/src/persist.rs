//! Binary containers for models (`PADM`), descriptor sets (`PADS`) and
//! encoded-vector batches (`PADV`), a lossless JSON view of models, and the
//! per-sample score table.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classify::LinearSvm;
use crate::densesift::{Descriptor, DescriptorSet, DESCRIPTOR_LEN};
use crate::encode::EncodingKind;
use crate::error::{PadError, Result};
use crate::ingest::Label;
use crate::vocab::{Codebook, GmmModel, PcaProjection};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Kmeans,
    Pca,
    Gmm,
    Svm,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Kmeans => 1,
            ModelKind::Pca => 2,
            ModelKind::Gmm => 3,
            ModelKind::Svm => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => ModelKind::Kmeans,
            2 => ModelKind::Pca,
            3 => ModelKind::Gmm,
            4 => ModelKind::Svm,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Kmeans(Codebook),
    Pca(PcaProjection),
    Gmm(GmmModel),
    Svm(LinearSvm),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Kmeans(_) => ModelKind::Kmeans,
            Model::Pca(_) => ModelKind::Pca,
            Model::Gmm(_) => ModelKind::Gmm,
            Model::Svm(_) => ModelKind::Svm,
        }
    }

    fn dims(&self) -> Vec<u64> {
        let d = |v: usize| v as u64;
        match self {
            Model::Kmeans(cb) => vec![d(cb.k()), d(cb.dim())],
            Model::Pca(p) => vec![d(p.output_dim()), d(p.input_dim())],
            Model::Gmm(g) => vec![d(g.k()), d(g.dim())],
            Model::Svm(s) => vec![d(s.dim())],
        }
    }

    fn payload(&self) -> Vec<f64> {
        match self {
            Model::Kmeans(cb) => cb.centroids().to_vec(),
            Model::Pca(p) => [p.mean(), p.basis(), p.eigenvalues()].concat(),
            Model::Gmm(g) => [g.weights(), g.means(), g.variances()].concat(),
            Model::Svm(s) => {
                let mut v = s.w.clone();
                v.push(s.b);
                v
            }
        }
    }

    fn structural(&self) -> Value {
        match self {
            Model::Pca(p) => serde_json::json!({ "whiten": p.whiten() }),
            Model::Svm(s) => serde_json::json!({ "positive": s.positive }),
            _ => Value::Null,
        }
    }

    fn rebuild(kind: ModelKind, dims: &[u64], structural: &Value, payload: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| PadError::UnsupportedFormat(format!("{kind:?} model: {m}"));
        let dims: Vec<usize> = dims.iter().map(|&v| v as usize).collect();
        let expect = |n: usize| {
            if payload.len() == n {
                Ok(())
            } else {
                Err(bad(&format!("payload has {} values, expected {n}", payload.len())))
            }
        };
        match (kind, dims.as_slice()) {
            (ModelKind::Kmeans, &[k, d]) => {
                expect(k * d)?;
                Ok(Model::Kmeans(Codebook::new(d, payload)?))
            }
            (ModelKind::Pca, &[out, inp]) => {
                expect(inp + out * inp + out)?;
                let whiten = structural.get("whiten").and_then(Value::as_bool).unwrap_or(false);
                let basis = payload[inp..inp + out * inp].to_vec();
                let eig = payload[inp + out * inp..].to_vec();
                Ok(Model::Pca(PcaProjection::new(inp, payload[..inp].to_vec(), basis, eig, whiten)?))
            }
            (ModelKind::Gmm, &[k, d]) => {
                expect(k + 2 * k * d)?;
                let w = payload[..k].to_vec();
                let m = payload[k..k + k * d].to_vec();
                let v = payload[k + k * d..].to_vec();
                Ok(Model::Gmm(GmmModel::new(d, w, m, v)?))
            }
            (ModelKind::Svm, &[d]) => {
                expect(d + 1)?;
                let positive: Label = structural
                    .get("positive")
                    .cloned()
                    .map(serde_json::from_value)
                    .transpose()
                    .map_err(|e| bad(&e.to_string()))?
                    .ok_or_else(|| bad("missing positive class"))?;
                let b = payload[d];
                let mut w = payload;
                w.truncate(d);
                Ok(Model::Svm(LinearSvm { w, b, positive }))
            }
            _ => Err(bad(&format!("unexpected dimensions {dims:?}"))),
        }
    }
}

/// Provenance stored alongside every model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_hash: String,
    /// Digests of the model files this one was trained from.
    pub depends_on: Vec<String>,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct HeaderMeta {
    #[serde(flatten)]
    meta: ModelMeta,
    structure: Value,
}

impl ModelFile {
    pub fn new(model: Model, meta: ModelMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.model.dims();
        let payload = self.model.payload();
        let meta = serde_json::to_vec(&HeaderMeta { meta: self.meta.clone(), structure: self.model.structural() })
            .expect("metadata serialises");
        let mut out = Vec::with_capacity(32 + meta.len() + 8 * payload.len());
        out.extend_from_slice(b"PADM");
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.model.kind().code());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "PADM");
        r.magic(b"PADM")?;
        r.version()?;
        let code = r.u8()?;
        let kind = ModelKind::from_code(code).ok_or_else(|| r.err(&format!("unknown model kind {code}")))?;
        let ndims = r.u32()? as usize;
        if ndims > 8 {
            return Err(r.err("too many dimensions"));
        }
        let dims = (0..ndims).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let meta_len = r.u32()? as usize;
        let header: HeaderMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| r.err(&format!("metadata: {e}")))?;
        let count = r.u64()? as usize;
        if count.checked_mul(8).map_or(true, |n| n != r.remaining()) {
            return Err(r.err("payload length does not match the file size"));
        }
        let payload = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let model = Model::rebuild(kind, &dims, &header.structure, payload)?;
        Ok(Self { model, meta: header.meta })
    }

    pub fn digest(&self) -> String {
        digest(&self.to_bytes())
    }

    /// JSON view with every number written as a shortest round-trip decimal
    /// string.
    pub fn to_json(&self) -> String {
        let doc = JsonModel {
            magic: "PADM".into(),
            version: FORMAT_VERSION,
            kind: self.model.kind(),
            dims: self.model.dims(),
            meta: self.meta.clone(),
            structure: self.model.structural(),
            payload: self.model.payload().iter().map(|v| format!("{v:?}")).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: JsonModel =
            serde_json::from_str(text).map_err(|e| PadError::UnsupportedFormat(format!("model JSON: {e}")))?;
        if doc.magic != "PADM" || doc.version != FORMAT_VERSION {
            return Err(PadError::UnsupportedFormat(format!("model JSON {} v{}", doc.magic, doc.version)));
        }
        let payload = doc
            .payload
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PadError::UnsupportedFormat(format!("model JSON payload: {e}")))?;
        let model = Model::rebuild(doc.kind, &doc.dims, &doc.structure, payload)?;
        Ok(Self { model, meta: doc.meta })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonModel {
    magic: String,
    version: u32,
    kind: ModelKind,
    dims: Vec<u64>,
    meta: ModelMeta,
    structure: Value,
    payload: Vec<String>,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PadError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PadError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PadError::io(path, e))
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<String> {
    let bytes = model.to_bytes();
    write_file(path.as_ref(), &bytes)?;
    Ok(digest(&bytes))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    ModelFile::from_bytes(&read_file(path)?).map_err(|e| locate(path, e))
}

fn locate(path: &Path, e: PadError) -> PadError {
    match e {
        PadError::UnsupportedFormat(m) => PadError::format(path, m),
        other => other,
    }
}

pub fn descriptors_to_bytes(ds: &DescriptorSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + ds.len() * 4 * (3 + DESCRIPTOR_LEN));
    out.extend_from_slice(b"PADS");
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [ds.len(), DESCRIPTOR_LEN, ds.width, ds.height] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for d in &ds.descriptors {
        for v in [d.x, d.y, d.scale].iter().chain(&d.values) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn descriptors_from_bytes(bytes: &[u8]) -> Result<DescriptorSet> {
    let mut r = Reader::new(bytes, "PADS");
    r.magic(b"PADS")?;
    r.version()?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != DESCRIPTOR_LEN {
        return Err(PadError::DimensionMismatch { expected: DESCRIPTOR_LEN, got: dim });
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    if r.remaining() != count * 4 * (3 + dim) {
        return Err(r.err("descriptor count does not match the file size"));
    }
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let (x, y, scale) = (r.f32()?, r.f32()?, r.f32()?);
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        for v in values.iter_mut() {
            *v = r.f32()?;
        }
        descriptors.push(Descriptor { x, y, scale, values });
    }
    Ok(DescriptorSet { width, height, descriptors })
}

pub fn save_descriptors(path: impl AsRef<Path>, ds: &DescriptorSet) -> Result<()> {
    write_file(path.as_ref(), &descriptors_to_bytes(ds))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    descriptors_from_bytes(&read_file(path)?).map_err(|e| locate(path, e))
}

/// Rows of encoded vectors of one kind, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBatch {
    pub kind: EncodingKind,
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
}

pub fn vectors_to_bytes(batch: &VectorBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 4 * batch.dim * batch.rows.len());
    out.extend_from_slice(b"PADV");
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(batch.kind.code());
    out.extend_from_slice(&(batch.rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(batch.dim as u32).to_le_bytes());
    for row in &batch.rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn vectors_from_bytes(bytes: &[u8]) -> Result<VectorBatch> {
    let mut r = Reader::new(bytes, "PADV");
    r.magic(b"PADV")?;
    r.version()?;
    let code = r.u8()?;
    let kind = EncodingKind::from_code(code).ok_or_else(|| r.err(&format!("unknown encoding kind {code}")))?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if r.remaining() != count * dim * 4 {
        return Err(r.err("row count does not match the file size"));
    }
    let rows = (0..count)
        .map(|_| (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(VectorBatch { kind, dim, rows })
}

pub fn save_vectors(path: impl AsRef<Path>, batch: &VectorBatch) -> Result<()> {
    for row in &batch.rows {
        crate::error::check_dim(batch.dim, row.len())?;
    }
    write_file(path.as_ref(), &vectors_to_bytes(batch))
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<VectorBatch> {
    let path = path.as_ref();
    vectors_from_bytes(&read_file(path)?).map_err(|e| locate(path, e))
}

/// One line of a score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub label: Label,
    pub material: String,
    pub score: f64,
    pub s_bf: f64,
    pub s_pa: f64,
}

pub fn write_scores(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| PadError::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PadError::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for rec in r.deserialize::<ScoreRow>() {
        let row = rec.map_err(|e| PadError::format(path, e.to_string()))?;
        if !row.score.is_finite() {
            return Err(PadError::format(path, format!("non-finite score for `{}`", row.id)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PadError::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_file(path.as_ref(), text.as_bytes())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn err(&self, m: &str) -> PadError {
        PadError::UnsupportedFormat(format!("{} at byte {}: {m}", self.what, self.pos))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        if &self.array::<4>()? != m {
            return Err(PadError::UnsupportedFormat(format!("not a {} file", self.what)));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.err(&format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gmm_file() -> ModelFile {
        let g = GmmModel::new(2, vec![0.25, 0.75], vec![0.1, -0.2, 1.0 / 3.0, 4.0], vec![1.0, 2.0, 0.5, 1e-7])
            .unwrap();
        let meta = ModelMeta {
            config_hash: "abc".into(),
            depends_on: vec!["d1".into()],
            params: serde_json::json!({ "k": 2 }),
        };
        ModelFile::new(Model::Gmm(g), meta)
    }

    #[test]
    fn model_round_trips_through_bytes_and_json() {
        let m = gmm_file();
        assert_eq!(ModelFile::from_bytes(&m.to_bytes()).unwrap(), m);
        assert_eq!(ModelFile::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn corrupt_models_are_rejected() {
        let bytes = gmm_file().to_bytes();
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(ModelFile::from_bytes(&wrong).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(ModelFile::from_bytes(&version).is_err());
    }

    #[test]
    fn svm_and_pca_round_trip() {
        let svm = Model::Svm(LinearSvm { w: vec![0.5, -1.5], b: 0.25, positive: Label::Attack });
        let f = ModelFile::new(svm, ModelMeta::default());
        assert_eq!(ModelFile::from_bytes(&f.to_bytes()).unwrap(), f);
        let pca = PcaProjection::new(2, vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0], true).unwrap();
        let f = ModelFile::new(Model::Pca(pca), ModelMeta::default());
        assert_eq!(ModelFile::from_json(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn descriptor_and_vector_files_round_trip() {
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        values[3] = 0.5;
        let ds = DescriptorSet {
            width: 30,
            height: 40,
            descriptors: vec![Descriptor { x: 10.0, y: 12.0, scale: 5.0, values }],
        };
        assert_eq!(descriptors_from_bytes(&descriptors_to_bytes(&ds)).unwrap(), ds);
        let batch = VectorBatch { kind: EncodingKind::Vlad, dim: 2, rows: vec![vec![1.0, 2.0], vec![0.0, -1.0]] };
        assert_eq!(vectors_from_bytes(&vectors_to_bytes(&batch)).unwrap(), batch);
    }
}
