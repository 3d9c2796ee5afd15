//! Synthetic datasets with planted AU co-occurrence, and the on-disk
//! dataset format (label CSV, landmark CSV, one tensor file per image).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::numerics::Tensor;
use crate::prior::PriorMatrix;

pub use crate::model::SampleRecord;

/// `P(a_child = 1 | a_parent = 1) = cond`; the parent must precede the child.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub child: usize,
    pub parent: usize,
    pub cond: f64,
}

impl std::str::FromStr for Link {
    type Err = Error;

    /// `child:parent:cond`, with 0-based AU indices.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Spec(format!("link {s:?} is not child:parent:cond"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Link {
            child: parts[0].trim().parse().map_err(|_| bad())?,
            parent: parts[1].trim().parse().map_err(|_| bad())?,
            cond: parts[2].trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub image_size: usize,
    pub image_channels: usize,
    /// `P(a_i = 1)` per AU.
    pub marginals: Vec<f64>,
    /// At most one parent per child.
    pub links: Vec<Link>,
    /// Template landmark positions; empty means a centered grid.
    #[serde(default)]
    pub template: Vec<(f64, f64)>,
    /// Standard deviation of per-sample landmark jitter, in pixels.
    pub jitter: f64,
    /// Peak of the Gaussian blob added at each anchor of an active AU.
    pub blob_amplitude: f64,
    /// Per-AU peaks overriding `blob_amplitude`; empty means uniform.
    #[serde(default)]
    pub blob_amplitudes: Vec<f64>,
    pub blob_sigma: f64,
    /// Peak of the dot drawn at every landmark.
    pub landmark_amplitude: f64,
    pub noise_level: f64,
    /// Landmark indices per AU; empty means AU `i` uses landmark `i % m`.
    #[serde(default)]
    pub anchors: Vec<Vec<usize>>,
    /// The two landmarks whose distance is the inter-ocular distance.
    pub eyes: (usize, usize),
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 8,
            m: 10,
            image_size: 32,
            image_channels: 1,
            marginals: vec![0.3; 8],
            links: Vec::new(),
            template: Vec::new(),
            jitter: 0.5,
            blob_amplitude: 1.0,
            blob_amplitudes: Vec::new(),
            blob_sigma: 1.5,
            landmark_amplitude: 0.5,
            noise_level: 0.3,
            anchors: Vec::new(),
            eyes: (0, 1),
            sample_count: 256,
            seed: 0,
        }
    }
}

const MAX_ENUMERATED_AUS: usize = 20;

impl SynthSpec {
    /// Landmark template: the configured one, or a grid over the central 60% of the image.
    pub fn template_points(&self) -> Vec<(f64, f64)> {
        if !self.template.is_empty() {
            return self.template.clone();
        }
        let cols = (self.m as f64).sqrt().ceil() as usize;
        let rows = self.m.div_ceil(cols);
        let s = self.image_size as f64;
        (0..self.m)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                let x = s * (0.2 + 0.6 * (c as f64 + 0.5) / cols as f64);
                let y = s * (0.2 + 0.6 * (r as f64 + 0.5) / rows as f64);
                (x, y)
            })
            .collect()
    }

    pub fn anchor(&self, i: usize) -> Vec<usize> {
        self.anchors.get(i).cloned().unwrap_or_else(|| vec![i % self.m])
    }

    pub fn amplitude(&self, i: usize) -> f64 {
        self.blob_amplitudes.get(i).copied().unwrap_or(self.blob_amplitude)
    }

    fn parent_of(&self, child: usize) -> Option<&Link> {
        self.links.iter().find(|l| l.child == child)
    }

    /// `P(a_child = 1 | a_parent = 0)` implied by the marginals and `cond`.
    fn cond_given_absent(&self, l: &Link) -> f64 {
        let (pi, pj) = (self.marginals[l.child], self.marginals[l.parent]);
        (pi - l.cond * pj) / (1.0 - pj)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.n < 2 || self.m < 2 {
            return fail(format!("need n >= 2 and m >= 2, got n={} m={}", self.n, self.m));
        }
        if self.image_size == 0 || self.image_channels == 0 {
            return fail("image extents must be positive".into());
        }
        if self.marginals.len() != self.n {
            return fail(format!("{} marginals for {} AUs", self.marginals.len(), self.n));
        }
        if let Some(p) = self.marginals.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return fail(format!("marginal {p} must lie strictly between 0 and 1"));
        }
        for (k, l) in self.links.iter().enumerate() {
            if l.child >= self.n || l.parent >= l.child {
                return fail(format!("link {}:{} needs parent < child < n", l.child, l.parent));
            }
            if self.links[..k].iter().any(|o| o.child == l.child) {
                return fail(format!("AU {} has more than one parent", l.child));
            }
            if !(0.0..=1.0).contains(&l.cond) {
                return fail(format!("conditional {} outside [0, 1]", l.cond));
            }
            let q = self.cond_given_absent(l);
            if !(-1e-12..=1.0 + 1e-12).contains(&q) {
                return fail(format!(
                    "P(AU {}=1 | AU {}=1) = {} is infeasible with marginals {} and {} (implies P(.|absent) = {q:.4})",
                    l.child, l.parent, l.cond, self.marginals[l.child], self.marginals[l.parent]
                ));
            }
        }
        let template = self.template_points();
        if template.len() != self.m {
            return fail(format!("{} template points for {} landmarks", template.len(), self.m));
        }
        let s = self.image_size as f64;
        if template.iter().any(|&(x, y)| !(0.0..s).contains(&x) || !(0.0..s).contains(&y)) {
            return fail("template points must lie inside the image".into());
        }
        if !self.anchors.is_empty()
            && (self.anchors.len() != self.n || self.anchors.iter().flatten().any(|&a| a >= self.m))
        {
            return fail("anchors must list landmarks below m for every AU".into());
        }
        if self.eyes.0 >= self.m || self.eyes.1 >= self.m || self.eyes.0 == self.eyes.1 {
            return fail(format!("eye landmarks {:?} invalid for m={}", self.eyes, self.m));
        }
        let (e0, e1) = (template[self.eyes.0], template[self.eyes.1]);
        if (e0.0 - e1.0).hypot(e0.1 - e1.1) <= 0.0 {
            return fail("eye landmarks coincide in the template".into());
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("blob_amplitude", self.blob_amplitude),
            ("landmark_amplitude", self.landmark_amplitude),
            ("noise_level", self.noise_level),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a non-negative number"));
            }
        }
        if !self.blob_amplitudes.is_empty() && self.blob_amplitudes.len() != self.n {
            return fail(format!("{} blob amplitudes for {} AUs", self.blob_amplitudes.len(), self.n));
        }
        if self.blob_amplitudes.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return fail("blob amplitudes must be non-negative numbers".into());
        }
        if !(self.blob_sigma > 0.0) {
            return fail("blob_sigma must be positive".into());
        }
        Ok(())
    }

    /// Draws one label vector along the conditional chain.
    pub fn sample_labels(&self, rng: &mut impl Rng) -> Vec<u8> {
        let mut a = vec![0u8; self.n];
        for i in 0..self.n {
            let p = match self.parent_of(i) {
                Some(l) if a[l.parent] == 1 => l.cond,
                Some(l) => self.cond_given_absent(l).clamp(0.0, 1.0),
                None => self.marginals[i],
            };
            a[i] = u8::from(rng.random::<f64>() < p);
        }
        a
    }

    /// Probability of every joint label state, indexed by bit pattern.
    fn joint(&self) -> Result<Vec<f64>> {
        if self.n > MAX_ENUMERATED_AUS {
            return Err(Error::Spec(format!(
                "exact planted statistics support at most {MAX_ENUMERATED_AUS} AUs"
            )));
        }
        let states = 1usize << self.n;
        Ok((0..states)
            .map(|s| {
                (0..self.n)
                    .map(|i| {
                        let on = s >> i & 1 == 1;
                        let p = match self.parent_of(i) {
                            Some(l) if s >> l.parent & 1 == 1 => l.cond,
                            Some(l) => self.cond_given_absent(l).clamp(0.0, 1.0),
                            None => self.marginals[i],
                        };
                        if on {
                            p
                        } else {
                            1.0 - p
                        }
                    })
                    .product()
            })
            .collect())
    }

    /// Exact prior of the planted label distribution, with coefficients
    /// rounded to 12 decimals so that independent pairs tie exactly.
    pub fn planted_prior(&self) -> Result<PriorMatrix> {
        self.validate()?;
        let joint = self.joint()?;
        let n = self.n;
        let mut p_cond = Tensor::zeros(&[n, n]);
        let mut occurrence = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let (mut both, mut neither, mut pj) = (0.0, 0.0, 0.0);
                for (s, &pr) in joint.iter().enumerate() {
                    let (ai, aj) = (s >> i & 1 == 1, s >> j & 1 == 1);
                    if aj {
                        pj += pr;
                    }
                    if ai && aj {
                        both += pr;
                    }
                    if !ai && !aj {
                        neither += pr;
                    }
                }
                if i == j {
                    occurrence[i] = pj;
                }
                p_cond.data_mut()[i * n + j] = if i == j {
                    1.0
                } else {
                    (0.5 * (both / pj + neither / (1.0 - pj)) * 1e12).round() / 1e12
                };
            }
        }
        PriorMatrix::from_coefficients(p_cond, occurrence)
    }

    fn sample(&self, index: usize, template: &[(f64, f64)]) -> Result<SampleRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let labels = self.sample_labels(&mut rng);
        let s = self.image_size;
        let hi = s as f64 - 1.0;
        let jitter = Normal::new(0.0, self.jitter).map_err(|e| Error::Spec(e.to_string()))?;
        let landmarks: Vec<(f64, f64)> = template
            .iter()
            .map(|&(x, y)| {
                let dx = jitter.sample(&mut rng);
                let dy = jitter.sample(&mut rng);
                ((x + dx).clamp(0.0, hi), (y + dy).clamp(0.0, hi))
            })
            .collect();
        let mut plane = vec![0.0; s * s];
        let mut splat = |(cx, cy): (f64, f64), amp: f64, sigma: f64| {
            if amp == 0.0 {
                return;
            }
            let k = -0.5 / (sigma * sigma);
            for y in 0..s {
                for x in 0..s {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    plane[y * s + x] += amp * (k * d2).exp();
                }
            }
        };
        for &p in &landmarks {
            splat(p, self.landmark_amplitude, 0.8);
        }
        for (i, &a) in labels.iter().enumerate() {
            if a == 1 {
                let anchor = self.anchor(i);
                let cx = anchor.iter().map(|&l| landmarks[l].0).sum::<f64>() / anchor.len() as f64;
                let cy = anchor.iter().map(|&l| landmarks[l].1).sum::<f64>() / anchor.len() as f64;
                splat((cx, cy), self.amplitude(i), self.blob_sigma);
            }
        }
        let noise = Normal::new(0.0, self.noise_level).map_err(|e| Error::Spec(e.to_string()))?;
        let mut data = Vec::with_capacity(self.image_channels * s * s);
        for _ in 0..self.image_channels {
            data.extend(plane.iter().map(|&v| v + noise.sample(&mut rng)));
        }
        let (e0, e1) = (landmarks[self.eyes.0], landmarks[self.eyes.1]);
        let inter_ocular = (e0.0 - e1.0).hypot(e0.1 - e1.1);
        if !(inter_ocular > 0.0) {
            return Err(Error::Spec(format!("sample {index}: eye landmarks coincide after jitter")));
        }
        Ok(SampleRecord {
            id: format!("s{index:06}"),
            image: Tensor::new(vec![self.image_channels, s, s], data)?,
            landmarks,
            labels,
            inter_ocular,
        })
    }
}

/// Generates `spec.sample_count` samples; sample `i` depends only on
/// `(seed, i)`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let template = spec.template_points();
    (0..spec.sample_count)
        .into_par_iter()
        .map(|i| spec.sample(i, &template))
        .collect()
}

/// Seeded disjoint split: returns `(train, test)` index lists, each sorted.
pub fn split_indices(len: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside [0, 1)")));
    }
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    let n_test = (len as f64 * test_fraction).round() as usize;
    let (test, train) = idx.split_at(n_test);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

// ---- files ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub spec: Option<SynthSpec>,
    pub n: usize,
    pub m: usize,
    pub image_shape: Vec<usize>,
    pub samples: Vec<String>,
}

pub const LABELS_FILE: &str = "labels.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLANTED_PRIOR_FILE: &str = "planted_prior.csv";

pub fn labels_csv(samples: &[SampleRecord]) -> String {
    let n = samples.first().map_or(0, |s| s.labels.len());
    let mut out = String::from("sample_id");
    for i in 1..=n {
        out += &format!(",au_{i}");
    }
    out.push('\n');
    for s in samples {
        out += &s.id;
        for l in &s.labels {
            out += &format!(",{l}");
        }
        out.push('\n');
    }
    out
}

pub fn landmarks_csv(samples: &[SampleRecord]) -> String {
    let m = samples.first().map_or(0, |s| s.landmarks.len());
    let mut out = String::from("sample_id");
    for i in 1..=m {
        out += &format!(",x_{i},y_{i}");
    }
    out += ",d_o\n";
    for s in samples {
        out += &s.id;
        for (x, y) in &s.landmarks {
            out += &format!(",{x},{y}");
        }
        out += &format!(",{}\n", s.inter_ocular);
    }
    out
}

/// Writes a dataset directory. The planted prior is written when `spec` is given.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[SampleRecord], spec: Option<&SynthSpec>) -> Result<()> {
    let dir = dir.as_ref();
    let first = samples.first().ok_or_else(|| Error::Input("no samples to write".into()))?;
    fs::create_dir_all(dir.join("images"))?;
    fs::write(dir.join(LABELS_FILE), labels_csv(samples))?;
    fs::write(dir.join(LANDMARKS_FILE), landmarks_csv(samples))?;
    for s in samples {
        write_tensor(dir.join("images").join(format!("{}.mgt", s.id)), &s.image)?;
    }
    if let Some(spec) = spec {
        spec.planted_prior()?.write_csv(dir.join(PLANTED_PRIOR_FILE))?;
    }
    let manifest = DatasetManifest {
        format: 1,
        spec: spec.cloned(),
        n: first.labels.len(),
        m: first.landmarks.len(),
        image_shape: first.image.shape().to_vec(),
        samples: samples.iter().map(|s| s.id.clone()).collect(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Header {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[String]) -> Result<()> {
    let got: Vec<&str> = got.iter().collect();
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(Error::Header {
            path: path.display().to_string(),
            msg: format!("expected columns {}, found {}", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn rows(path: &Path, mut reader: csv::Reader<fs::File>, width: usize) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for r in reader.records() {
        let rec = r.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        out.push((line, rec));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    pub ids: Vec<String>,
    pub labels: Vec<Vec<u8>>,
}

/// Reads `sample_id,au_1..au_n`; `n` is taken from the header.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| Error::Header {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let n = header.len().saturating_sub(1);
    let want: Vec<String> = std::iter::once("sample_id".to_string())
        .chain((1..=n.max(1)).map(|i| format!("au_{i}")))
        .collect();
    check_header(path, header, &want)?;
    let mut table = LabelTable {
        ids: Vec::new(),
        labels: Vec::new(),
    };
    for (line, rec) in rows(path, reader, n + 1)? {
        let parse = |k: usize| -> Result<u8> {
            match &rec[k] {
                "0" => Ok(0),
                "1" => Ok(1),
                v => Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    msg: format!("label {v:?} in column au_{k} is not 0 or 1"),
                }),
            }
        };
        table.labels.push((1..=n).map(parse).collect::<Result<_>>()?);
        table.ids.push(rec[0].to_string());
    }
    if table.ids.is_empty() {
        return Err(Error::Input(format!("{} has no samples", path.display())));
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkTable {
    pub ids: Vec<String>,
    pub points: Vec<Vec<(f64, f64)>>,
    pub inter_ocular: Vec<f64>,
}

/// Reads `sample_id,x_1,y_1,..,x_m,y_m,d_o`; coordinates must lie in `[0, bound)`.
pub fn load_landmarks(path: impl AsRef<Path>, bound: f64) -> Result<LandmarkTable> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| Error::Header {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let m = header.len().saturating_sub(2) / 2;
    let mut want = vec!["sample_id".to_string()];
    for i in 1..=m.max(1) {
        want.push(format!("x_{i}"));
        want.push(format!("y_{i}"));
    }
    want.push("d_o".into());
    check_header(path, header, &want)?;
    let mut table = LandmarkTable {
        ids: Vec::new(),
        points: Vec::new(),
        inter_ocular: Vec::new(),
    };
    for (line, rec) in rows(path, reader, 2 * m + 2)? {
        let err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{:?} in column {} is not a number", &rec[k], want[k])))
        };
        let mut pts = Vec::with_capacity(m);
        for i in 0..m {
            let (x, y) = (num(1 + 2 * i)?, num(2 + 2 * i)?);
            if !(0.0..bound).contains(&x) || !(0.0..bound).contains(&y) {
                return Err(err(format!("landmark {} at ({x}, {y}) is outside the image", i + 1)));
            }
            pts.push((x, y));
        }
        let d = num(2 * m + 1)?;
        if !(d > 0.0) {
            return Err(err(format!("inter-ocular distance {d} must be positive")));
        }
        table.ids.push(rec[0].to_string());
        table.points.push(pts);
        table.inter_ocular.push(d);
    }
    Ok(table)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", mpath.display())))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", mpath.display())))?;
    let bound = *manifest.image_shape.last().unwrap_or(&0) as f64;
    let labels = load_labels(dir.join(LABELS_FILE))?;
    let marks = load_landmarks(dir.join(LANDMARKS_FILE), bound)?;
    if labels.ids != manifest.samples || marks.ids != manifest.samples {
        return Err(Error::Manifest("sample ids differ between manifest, labels and landmarks".into()));
    }
    if labels.labels[0].len() != manifest.n || marks.points[0].len() != manifest.m {
        return Err(Error::Manifest("AU or landmark count differs from the manifest".into()));
    }
    let samples = labels
        .ids
        .into_par_iter()
        .zip(labels.labels)
        .zip(marks.points)
        .zip(marks.inter_ocular)
        .map(|(((id, labels), landmarks), inter_ocular)| {
            let image = read_tensor(dir.join("images").join(format!("{id}.mgt")))?;
            if image.shape() != manifest.image_shape.as_slice() {
                return Err(Error::Manifest(format!("image {id} has shape {:?}", image.shape())));
            }
            Ok(SampleRecord {
                id,
                image,
                landmarks,
                labels,
                inter_ocular,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_parsing() {
        let l: Link = "3:1:0.9".parse().unwrap();
        assert_eq!((l.child, l.parent, l.cond), (3, 1, 0.9));
        assert!("3:1".parse::<Link>().is_err());
    }

    #[test]
    fn infeasible_conditional_is_spec_error() {
        // P(a1)=0.1 cannot follow P(a1|a0)=1 when P(a0)=0.5.
        let spec = SynthSpec {
            n: 2,
            marginals: vec![0.5, 0.1],
            links: vec![Link { child: 1, parent: 0, cond: 1.0 }],
            ..SynthSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (a, b) = split_indices(10, 0.3, 4).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(split_indices(10, 0.3, 4).unwrap(), (a, b));
    }
}
