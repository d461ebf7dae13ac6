//! Fixed-length image representations built from a [`DescriptorSet`]:
//! spatial-pyramid bag of words, Fisher vectors and VLAD.

use serde::{Deserialize, Serialize};

use crate::densesift::{DescriptorSet, DESCRIPTOR_LEN};
use crate::error::{check_dim, PadError, Result};
use crate::par;
use crate::vocab::{Codebook, GmmModel, NearestCentroidIndex, PcaProjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Bow,
    Fv,
    Vlad,
}

impl EncodingKind {
    pub const ALL: [EncodingKind; 3] = [EncodingKind::Fv, EncodingKind::Vlad, EncodingKind::Bow];

    pub fn as_str(self) -> &'static str {
        match self {
            EncodingKind::Bow => "bow",
            EncodingKind::Fv => "fv",
            EncodingKind::Vlad => "vlad",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            EncodingKind::Bow => 0,
            EncodingKind::Fv => 1,
            EncodingKind::Vlad => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EncodingKind::Bow),
            1 => Some(EncodingKind::Fv),
            2 => Some(EncodingKind::Vlad),
            _ => None,
        }
    }
}

impl std::fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EncodingKind {
    type Err = PadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bow" => Ok(EncodingKind::Bow),
            "fv" | "fisher" => Ok(EncodingKind::Fv),
            "vlad" => Ok(EncodingKind::Vlad),
            other => Err(PadError::InvalidInput(format!("unknown encoding `{other}`"))),
        }
    }
}

/// Post-processing applied to the raw Fisher vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FvNorm {
    /// Signed square root followed by L2.
    #[default]
    Improved,
    L2,
    None,
}

impl std::str::FromStr for FvNorm {
    type Err = PadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "improved" => Ok(FvNorm::Improved),
            "l2" => Ok(FvNorm::L2),
            "none" => Ok(FvNorm::None),
            other => Err(PadError::InvalidInput(format!("unknown Fisher normalisation `{other}`"))),
        }
    }
}

/// Grid subdivisions of the spatial pyramid, coarsest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PyramidSpec {
    levels: Vec<usize>,
}

impl PyramidSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() || levels.contains(&0) {
            return Err(PadError::InvalidInput(format!("invalid pyramid levels {levels:?}")));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn cells(&self) -> usize {
        self.levels.iter().map(|n| n * n).sum()
    }
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self { levels: vec![1, 2, 4] }
    }
}

impl TryFrom<Vec<usize>> for PyramidSpec {
    type Error = PadError;

    fn try_from(levels: Vec<usize>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<PyramidSpec> for Vec<usize> {
    fn from(p: PyramidSpec) -> Self {
        p.levels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    pub kind: EncodingKind,
    pub values: Vec<f32>,
    /// Vocabulary size.
    pub k: usize,
    /// Block length per vocabulary entry: pyramid cells for BoW, the
    /// projected dimension for FV and VLAD.
    pub block: usize,
    /// Set when the image produced no descriptors.
    pub empty: bool,
}

impl EncodedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Index of the half-open cell containing `pos` when `side` is split into
/// `n` parts; positions on the far edge belong to the last cell.
fn cell_of(pos: f32, side: usize, n: usize) -> usize {
    let p = f64::from(pos) * n as f64;
    (1..n).take_while(|&c| p >= (c * side) as f64).count()
}

#[derive(Debug, Clone)]
pub struct BowEncoder {
    index: NearestCentroidIndex,
    pyramid: PyramidSpec,
}

impl BowEncoder {
    pub fn new(codebook: Codebook, pyramid: PyramidSpec) -> Result<Self> {
        check_dim(DESCRIPTOR_LEN, codebook.dim())?;
        Ok(Self { index: NearestCentroidIndex::new(codebook), pyramid })
    }

    pub fn codebook(&self) -> &Codebook {
        self.index.codebook()
    }

    pub fn pyramid(&self) -> &PyramidSpec {
        &self.pyramid
    }

    pub fn len(&self) -> usize {
        self.codebook().k() * self.pyramid.cells()
    }

    /// Raw per-cell visual word counts, cells level-major and row-major.
    pub fn histogram(&self, ds: &DescriptorSet) -> Vec<u32> {
        let k = self.codebook().k();
        let words = par::map(&ds.descriptors, |d| self.index.nearest(&d.values));
        let mut counts = vec![0u32; self.len()];
        for (d, &w) in ds.descriptors.iter().zip(&words) {
            let mut base = 0;
            for &n in self.pyramid.levels() {
                let cx = cell_of(d.x, ds.width, n);
                let cy = cell_of(d.y, ds.height, n);
                counts[(base + cy * n + cx) * k + w] += 1;
                base += n * n;
            }
        }
        counts
    }

    pub fn encode(&self, ds: &DescriptorSet) -> EncodedVector {
        let mut v: Vec<f64> = self.histogram(ds).into_iter().map(f64::from).collect();
        l2_normalize(&mut v);
        EncodedVector {
            kind: EncodingKind::Bow,
            values: to_f32(&v),
            k: self.codebook().k(),
            block: self.pyramid.cells(),
            empty: ds.is_empty(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FisherEncoder {
    pca: PcaProjection,
    gmm: GmmModel,
    norm: FvNorm,
    inv_std: Vec<f64>,
}

impl FisherEncoder {
    pub fn new(pca: PcaProjection, gmm: GmmModel, norm: FvNorm) -> Result<Self> {
        check_dim(DESCRIPTOR_LEN, pca.input_dim())?;
        check_dim(pca.output_dim(), gmm.dim())?;
        let inv_std = gmm.variances().iter().map(|v| 1.0 / v.sqrt()).collect();
        Ok(Self { pca, gmm, norm, inv_std })
    }

    pub fn len(&self) -> usize {
        2 * self.gmm.k() * self.gmm.dim()
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn pca(&self) -> &PcaProjection {
        &self.pca
    }

    /// Unnormalised `[phi1_1, phi2_1, ..., phi1_K, phi2_K]`.
    pub fn statistics(&self, ds: &DescriptorSet) -> Vec<f64> {
        let (k, d) = (self.gmm.k(), self.gmm.dim());
        let n = ds.len();
        let sums = par::chunked_reduce(
            n,
            |r| {
                let mut acc = vec![0.0; 2 * k * d];
                let mut y = vec![0.0; d];
                let mut post = vec![0.0; k];
                for desc in &ds.descriptors[r] {
                    self.pca.project_into(&desc.values, &mut y);
                    self.gmm.posteriors_into(&y, &mut post);
                    for (j, &a) in post.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let mu = self.gmm.mean(j);
                        let is = &self.inv_std[j * d..(j + 1) * d];
                        let block = &mut acc[2 * j * d..2 * (j + 1) * d];
                        let (first, second) = block.split_at_mut(d);
                        for ((f, s), ((yt, m), i)) in first.iter_mut().zip(second).zip(y.iter().zip(mu).zip(is)) {
                            let z = (yt - m) * i;
                            *f += a * z;
                            *s += a * (z * z - 1.0);
                        }
                    }
                }
                acc
            },
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
        let Some(mut phi) = sums else {
            return vec![0.0; 2 * k * d];
        };
        for (j, w) in self.gmm.weights().iter().enumerate() {
            let s1 = 1.0 / (n as f64 * w.sqrt());
            let s2 = 1.0 / (n as f64 * (2.0 * w).sqrt());
            let block = &mut phi[2 * j * d..2 * (j + 1) * d];
            block[..d].iter_mut().for_each(|v| *v *= s1);
            block[d..].iter_mut().for_each(|v| *v *= s2);
        }
        phi
    }

    pub fn encode(&self, ds: &DescriptorSet) -> EncodedVector {
        let mut phi = self.statistics(ds);
        match self.norm {
            FvNorm::Improved => {
                phi.iter_mut().for_each(|v| *v = v.signum() * v.abs().sqrt());
                l2_normalize(&mut phi);
            }
            FvNorm::L2 => l2_normalize(&mut phi),
            FvNorm::None => {}
        }
        EncodedVector {
            kind: EncodingKind::Fv,
            values: to_f32(&phi),
            k: self.gmm.k(),
            block: self.gmm.dim(),
            empty: ds.is_empty(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VladEncoder {
    pca: PcaProjection,
    codebook: Codebook,
}

impl VladEncoder {
    pub fn new(pca: PcaProjection, codebook: Codebook) -> Result<Self> {
        check_dim(DESCRIPTOR_LEN, pca.input_dim())?;
        check_dim(pca.output_dim(), codebook.dim())?;
        Ok(Self { pca, codebook })
    }

    pub fn len(&self) -> usize {
        self.codebook.k() * self.codebook.dim()
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn pca(&self) -> &PcaProjection {
        &self.pca
    }

    /// Unnormalised residual sums, one block per centroid.
    pub fn residuals(&self, ds: &DescriptorSet) -> Vec<f64> {
        let d = self.codebook.dim();
        par::chunked_reduce(
            ds.len(),
            |r| {
                let mut acc = vec![0.0; self.len()];
                let mut y = vec![0.0; d];
                for desc in &ds.descriptors[r] {
                    self.pca.project_into(&desc.values, &mut y);
                    let (j, _) = self.codebook.nearest(&y);
                    let c = self.codebook.centroid(j);
                    for (a, (yt, ct)) in acc[j * d..(j + 1) * d].iter_mut().zip(y.iter().zip(c)) {
                        *a += yt - ct;
                    }
                }
                acc
            },
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
        .unwrap_or_else(|| vec![0.0; self.len()])
    }

    pub fn encode(&self, ds: &DescriptorSet) -> EncodedVector {
        let mut v = self.residuals(ds);
        l2_normalize(&mut v);
        EncodedVector {
            kind: EncodingKind::Vlad,
            values: to_f32(&v),
            k: self.codebook.k(),
            block: self.codebook.dim(),
            empty: ds.is_empty(),
        }
    }
}

pub fn encode_bow(ds: &DescriptorSet, cb: &Codebook, spec: &PyramidSpec) -> Result<EncodedVector> {
    Ok(BowEncoder::new(cb.clone(), spec.clone())?.encode(ds))
}

pub fn encode_fv(ds: &DescriptorSet, pca: &PcaProjection, g: &GmmModel) -> Result<EncodedVector> {
    Ok(FisherEncoder::new(pca.clone(), g.clone(), FvNorm::Improved)?.encode(ds))
}

pub fn encode_vlad(ds: &DescriptorSet, pca: &PcaProjection, cb: &Codebook) -> Result<EncodedVector> {
    Ok(VladEncoder::new(pca.clone(), cb.clone())?.encode(ds))
}

/// The three encoders used together by the pipeline.
#[derive(Debug, Clone)]
pub struct EncoderSet {
    pub fv: FisherEncoder,
    pub vlad: VladEncoder,
    pub bow: BowEncoder,
}

impl EncoderSet {
    pub fn encode(&self, kind: EncodingKind, ds: &DescriptorSet) -> EncodedVector {
        match kind {
            EncodingKind::Fv => self.fv.encode(ds),
            EncodingKind::Vlad => self.vlad.encode(ds),
            EncodingKind::Bow => self.bow.encode(ds),
        }
    }
}
