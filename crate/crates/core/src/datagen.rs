//! Synthetic occluded-face datasets, manifest import/export and the
//! attribute-conditioned gallery/probe split.
//!
//! Every synthetic image is a pure function of `(seed, identity, image
//! index)`, so generation can run in any order or thread count and still
//! produce identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OreoError, Result};
use crate::image_io::{self, GrayImage};
use crate::par;
use crate::seed::{self, tag};

/// Occluder types drawn over synthetic faces. Each one owns one attribute
/// bit, in the order given by [`SynthSpec::occluder_kinds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccluderKind {
    GlassesBar,
    HatBar,
    ChinPatch,
    SidePatch,
    MouthPatch,
}

impl OccluderKind {
    pub const ALL: [OccluderKind; 5] = [
        OccluderKind::GlassesBar,
        OccluderKind::HatBar,
        OccluderKind::ChinPatch,
        OccluderKind::SidePatch,
        OccluderKind::MouthPatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OccluderKind::GlassesBar => "glasses_bar",
            OccluderKind::HatBar => "hat_bar",
            OccluderKind::ChinPatch => "chin_patch",
            OccluderKind::SidePatch => "side_patch",
            OccluderKind::MouthPatch => "mouth_patch",
        }
    }
}

impl fmt::Display for OccluderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OccluderKind {
    type Err = OreoError;

    fn from_str(s: &str) -> Result<Self> {
        OccluderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| OreoError::InvalidConfig(format!("unknown occluder kind {s:?}")))
    }
}

fn default_kinds() -> Vec<OccluderKind> {
    OccluderKind::ALL.to_vec()
}

fn default_set_size() -> usize {
    5
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub occluded_fraction: f64,
    pub image_size: usize,
    #[serde(default = "default_kinds")]
    pub occluder_kinds: Vec<OccluderKind>,
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
    /// Index of the first image drawn per identity. A second dataset with
    /// the same seed and a disjoint index range holds fresh images of the
    /// same people.
    #[serde(default)]
    pub image_offset: usize,
    /// Consecutive images per media set (`set_id`).
    #[serde(default = "default_set_size")]
    pub set_size: usize,
}

impl SynthSpec {
    pub fn new(n_identities: usize, images_per_identity: usize, occluded_fraction: f64, seed: u64) -> Self {
        SynthSpec {
            n_identities,
            images_per_identity,
            occluded_fraction,
            image_size: 64,
            occluder_kinds: default_kinds(),
            label_noise: 0.0,
            seed,
            image_offset: 0,
            set_size: default_set_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OreoError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.occluded_fraction) {
            return bad(format!("occluded_fraction {} outside [0,1]", self.occluded_fraction));
        }
        if self.image_size < 16 {
            return bad(format!("image_size {} < 16", self.image_size));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0,1)", self.label_noise));
        }
        if self.occluded_fraction > 0.0 && self.occluder_kinds.is_empty() {
            return bad("occluded images requested but no occluder kinds given".into());
        }
        if self.set_size == 0 {
            return bad("set_size must be positive".into());
        }
        Ok(())
    }

    /// Occluded images per identity.
    pub fn occluded_per_identity(&self) -> usize {
        (self.occluded_fraction * self.images_per_identity as f64).round() as usize
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.occluder_kinds.iter().map(|k| k.name().to_string()).collect()
    }
}

/// One grayscale image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities in [0,1].
    pub pixels: Vec<f32>,
    pub identity: u32,
    pub attributes: Vec<u8>,
    pub occluded: bool,
    pub set_id: Option<String>,
}

/// A labelled collection of equally sized images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
    pub attribute_names: Vec<String>,
    /// Attribute indices whose presence marks an image as occluded.
    pub occlusion_subset: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.height, s.width))
    }

    /// Number of identity classes, taken as `max identity + 1`.
    pub fn n_classes(&self) -> usize {
        self.samples.iter().map(|s| s.identity as usize + 1).max().unwrap_or(0)
    }

    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Re-derives every `occluded` flag from the attribute bits.
    pub fn recompute_occluded(&mut self) {
        for s in &mut self.samples {
            s.occluded = self.occlusion_subset.iter().any(|&k| s.attributes.get(k) == Some(&1));
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            attribute_names: self.attribute_names.clone(),
            occlusion_subset: self.occlusion_subset.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some((h, w)) = self.image_dims() else {
            return Err(OreoError::Empty("dataset has no samples".into()));
        };
        let k = self.n_attributes();
        for (i, s) in self.samples.iter().enumerate() {
            if s.height != h || s.width != w || s.pixels.len() != h * w {
                return Err(OreoError::Shape(format!("sample {i} is not {h}x{w}")));
            }
            if s.attributes.len() != k {
                return Err(OreoError::Shape(format!(
                    "sample {i} has {} attributes, expected {k}",
                    s.attributes.len()
                )));
            }
            if s.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(OreoError::InvalidConfig(format!("sample {i} has pixels outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Per-identity face shape: 8 reals, all in units of the image side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub eye_spacing: f64,
    pub eye_size: f64,
    pub eye_height: f64,
    pub nose_length: f64,
    pub mouth_width: f64,
    pub face_half_width: f64,
    pub face_half_height: f64,
    pub skin_tone: f64,
}

impl FaceGeometry {
    pub fn for_identity(seed_root: u64, identity: u32) -> Self {
        let mut rng = seed::rng_for(seed_root, &[tag::GEOMETRY, identity as u64]);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        FaceGeometry {
            eye_spacing: u(0.10, 0.17),
            eye_size: u(0.030, 0.060),
            eye_height: u(0.06, 0.14),
            nose_length: u(0.08, 0.17),
            mouth_width: u(0.06, 0.14),
            face_half_width: u(0.28, 0.37),
            face_half_height: u(0.37, 0.45),
            skin_tone: u(0.45, 0.80),
        }
    }

    fn jittered(&self, rng: &mut impl Rng) -> Self {
        let mut j = |v: f64| v * rng.random_range(0.97..1.03);
        FaceGeometry {
            eye_spacing: j(self.eye_spacing),
            eye_size: j(self.eye_size),
            eye_height: j(self.eye_height),
            nose_length: j(self.nose_length),
            mouth_width: j(self.mouth_width),
            face_half_width: j(self.face_half_width),
            face_half_height: j(self.face_half_height),
            skin_tone: (self.skin_tone + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0),
        }
    }
}

/// A synthetic image together with its ground-truth region masks.
#[derive(Debug, Clone)]
pub struct RenderedFace {
    pub sample: ImageSample,
    /// Pixels inside the face ellipse.
    pub face_mask: Vec<bool>,
    /// Pixels painted by the occluder (empty mask if none was drawn).
    pub occluder_mask: Vec<bool>,
    pub occluder: Option<OccluderKind>,
}

impl RenderedFace {
    /// Fraction of face pixels covered by the occluder.
    pub fn occluder_coverage(&self) -> f64 {
        let face = self.face_mask.iter().filter(|&&f| f).count();
        let both = self
            .face_mask
            .iter()
            .zip(&self.occluder_mask)
            .filter(|(&f, &o)| f && o)
            .count();
        both as f64 / face.max(1) as f64
    }
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    /// Paints `value` wherever `inside(x, y)` holds (pixel centres, in
    /// image-side units) and returns the painted mask.
    fn paint(&mut self, value: f64, inside: impl Fn(f64, f64) -> bool) -> Vec<bool> {
        let n = self.size;
        let mut mask = vec![false; n * n];
        for y in 0..n {
            let fy = (y as f64 + 0.5) / n as f64;
            for x in 0..n {
                let fx = (x as f64 + 0.5) / n as f64;
                if inside(fx, fy) {
                    self.px[y * n + x] = value;
                    mask[y * n + x] = true;
                }
            }
        }
        mask
    }
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, ax: f64, ay: f64) -> bool {
    let dx = (x - cx) / ax;
    let dy = (y - cy) / ay;
    dx * dx + dy * dy <= 1.0
}

fn in_rect(x: f64, y: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    x >= x0 && x <= x1 && y >= y0 && y <= y1
}

/// Renders image `index` of `identity` with an optional occluder.
fn render(
    spec: &SynthSpec,
    identity: u32,
    index: usize,
    occluder: Option<OccluderKind>,
) -> (Vec<f32>, Vec<bool>, Vec<bool>) {
    let n = spec.image_size;
    let mut rng = seed::rng_for(spec.seed, &[tag::IMAGE, identity as u64, index as u64]);
    let g = FaceGeometry::for_identity(spec.seed, identity).jittered(&mut rng);
    let cx = 0.5 + rng.random_range(-0.03..0.03);
    let cy = 0.5 + rng.random_range(-0.03..0.03);
    let background = rng.random_range(0.10..0.25);
    let mut canvas = Canvas {
        size: n,
        px: vec![background; n * n],
    };

    let (fa, fb) = (g.face_half_width, g.face_half_height);
    let face_mask = canvas.paint(g.skin_tone, |x, y| in_ellipse(x, y, cx, cy, fa, fb));
    let dark = (g.skin_tone - 0.35).max(0.02);
    let eye_y = cy - g.eye_height;
    for side in [-1.0, 1.0] {
        let ex = cx + side * g.eye_spacing;
        canvas.paint(dark, |x, y| in_ellipse(x, y, ex, eye_y, g.eye_size, g.eye_size * 0.6));
        let brow_y = eye_y - g.eye_size * 1.5;
        canvas.paint(dark, |x, y| {
            in_rect(x, y, ex - g.eye_size * 1.2, ex + g.eye_size * 1.2, brow_y - 0.012, brow_y + 0.012)
        });
    }
    let nose_end = eye_y + g.eye_size + g.nose_length;
    canvas.paint((g.skin_tone - 0.18).max(0.0), |x, y| {
        in_rect(x, y, cx - 0.012, cx + 0.012, eye_y + g.eye_size * 0.5, nose_end)
    });
    let mouth_y = nose_end + 0.07;
    canvas.paint(dark, |x, y| in_ellipse(x, y, cx, mouth_y, g.mouth_width, 0.02));

    let occluder_mask = match occluder {
        None => vec![false; n * n],
        Some(kind) => {
            let value = rng.random_range(0.0..0.12);
            match kind {
                OccluderKind::GlassesBar => {
                    let half_w = g.eye_spacing + g.eye_size * 2.0;
                    let half_h = (g.eye_size * 1.6).max(0.06);
                    canvas.paint(value, |x, y| in_rect(x, y, cx - half_w, cx + half_w, eye_y - half_h, eye_y + half_h))
                }
                OccluderKind::HatBar => {
                    let bottom = eye_y - g.eye_size * 2.2;
                    let top = (cy - fb - 0.05).max(0.0);
                    canvas.paint(value, |x, y| in_rect(x, y, cx - fa - 0.05, cx + fa + 0.05, top, bottom))
                }
                OccluderKind::ChinPatch => {
                    let top = mouth_y + 0.035;
                    canvas.paint(value, |x, y| y >= top && in_ellipse(x, y, cx, cy, fa, fb))
                }
                OccluderKind::SidePatch => {
                    let (y0, y1) = (eye_y, mouth_y);
                    canvas.paint(value, |x, y| {
                        let dx = (x - cx).abs();
                        y >= y0 && y <= y1 && dx >= fa - 0.09 && dx <= fa + 0.01
                    })
                }
                OccluderKind::MouthPatch => {
                    let half_w = (g.mouth_width * 1.4).max(0.12);
                    canvas.paint(value, |x, y| in_rect(x, y, cx - half_w, cx + half_w, nose_end, mouth_y + 0.04))
                }
            }
        }
    };

    let pixels = canvas
        .px
        .iter()
        .map(|&v| {
            let noisy = v + rng.random_range(-0.03..0.03);
            image_io::unit_to_u8(noisy) as f32 / 255.0
        })
        .collect();
    (pixels, face_mask, occluder_mask)
}

/// Which images of an identity carry an occluder, and which kind.
fn occlusion_plan(spec: &SynthSpec, identity: u32) -> Vec<Option<OccluderKind>> {
    let k = spec.images_per_identity;
    let mut rng = seed::rng_for(
        spec.seed,
        &[tag::OCCLUSION_PICK, identity as u64, spec.image_offset as u64],
    );
    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(&mut rng);
    let mut plan = vec![None; k];
    for &i in idx.iter().take(spec.occluded_per_identity().min(k)) {
        let kind = spec.occluder_kinds[rng.random_range(0..spec.occluder_kinds.len())];
        plan[i] = Some(kind);
    }
    plan
}

/// Renders one sample with ground-truth masks. `local` is the index within
/// the identity's block (`0..images_per_identity`).
pub fn render_sample(spec: &SynthSpec, identity: u32, local: usize) -> RenderedFace {
    let plan = occlusion_plan(spec, identity);
    render_planned(spec, identity, local, plan[local])
}

fn render_planned(spec: &SynthSpec, identity: u32, local: usize, occluder: Option<OccluderKind>) -> RenderedFace {
    let index = spec.image_offset + local;
    let (pixels, face_mask, occluder_mask) = render(spec, identity, index, occluder);
    let n_attr = spec.occluder_kinds.len();
    let mut attributes = vec![0u8; n_attr];
    if let Some(kind) = occluder {
        let pos = spec.occluder_kinds.iter().position(|&k| k == kind).expect("planned kind is configured");
        attributes[pos] = 1;
    }
    if spec.label_noise > 0.0 {
        let mut rng = seed::rng_for(spec.seed, &[tag::LABEL_NOISE, identity as u64, index as u64]);
        for bit in &mut attributes {
            if rng.random_bool(spec.label_noise) {
                *bit ^= 1;
            }
        }
    }
    let occluded = attributes.iter().any(|&b| b == 1);
    RenderedFace {
        sample: ImageSample {
            height: spec.image_size,
            width: spec.image_size,
            pixels,
            identity,
            attributes,
            occluded,
            set_id: Some(format!("{identity}_{}", index / spec.set_size)),
        },
        face_mask,
        occluder_mask,
        occluder,
    }
}

/// Generates the dataset with region masks (identity-major order).
pub fn generate_with_masks(spec: &SynthSpec) -> Result<Vec<RenderedFace>> {
    spec.validate()?;
    let per = spec.images_per_identity;
    let plans: Vec<_> = (0..spec.n_identities as u32).map(|id| occlusion_plan(spec, id)).collect();
    Ok(par::map_range(spec.n_identities * per, |i| {
        let id = (i / per) as u32;
        let local = i % per;
        render_planned(spec, id, local, plans[id as usize][local])
    }))
}

/// Generates `n_identities × images_per_identity` samples, identity-major.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let faces = generate_with_masks(spec)?;
    Ok(Dataset {
        samples: faces.into_iter().map(|f| f.sample).collect(),
        attribute_names: spec.attribute_names(),
        occlusion_subset: (0..spec.occluder_kinds.len()).collect(),
    })
}

/// Reads a manifest CSV (`path,identity,set_id,attr_0,...`). Image paths
/// are resolved relative to the manifest's directory. `occlusion_subset`
/// defaults to every attribute.
pub fn load_manifest(path: &Path, occlusion_subset: Option<&[usize]>) -> Result<Dataset> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| OreoError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let fixed = ["path", "identity", "set_id"];
    if header.len() < 3 || header.iter().take(3).ne(fixed.iter().copied()) {
        return Err(OreoError::ManifestParse(format!(
            "header must start with path,identity,set_id; got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let k = header.len() - 3;
    for (j, name) in header.iter().skip(3).enumerate() {
        if name != format!("attr_{j}") {
            return Err(OreoError::ManifestParse(format!("column {} should be attr_{j}, got {name:?}", j + 3)));
        }
    }
    let subset: Vec<usize> = match occlusion_subset {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&i| i >= k) {
                return Err(OreoError::InvalidConfig(format!("occlusion attribute {bad} >= K = {k}")));
            }
            s.to_vec()
        }
        None => (0..k).collect(),
    };

    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 3 {
            return Err(OreoError::ManifestParse(format!(
                "row {}: {} attribute values, header declares {k}",
                row + 1,
                rec.len().saturating_sub(3)
            )));
        }
        let identity: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| OreoError::ManifestParse(format!("row {}: bad identity {:?}", row + 1, &rec[1])))?;
        let attributes = rec
            .iter()
            .skip(3)
            .map(|v| match v.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(OreoError::ManifestParse(format!("row {}: attribute value {other:?}", row + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        let set_id = Some(rec[2].to_string()).filter(|s| !s.is_empty());
        rows.push((row + 1, base.join(&rec[0]), identity, set_id, attributes));
    }

    let images = par::map_slice(&rows, |(row, p, ..)| {
        if !p.exists() {
            return Err(OreoError::ManifestRow {
                row: *row,
                path: p.clone(),
                reason: "file not found".into(),
            });
        }
        image_io::read_raster(p).map_err(|e| OreoError::ManifestRow {
            row: *row,
            path: p.clone(),
            reason: e.to_string(),
        })
    });

    let mut samples = Vec::with_capacity(rows.len());
    for ((_, _, identity, set_id, attributes), img) in rows.into_iter().zip(images) {
        let img = img?;
        let occluded = subset.iter().any(|&j| attributes[j] == 1);
        samples.push(ImageSample {
            height: img.height,
            width: img.width,
            pixels: img.to_unit(),
            identity,
            attributes,
            occluded,
            set_id,
        });
    }
    let ds = Dataset {
        samples,
        attribute_names: (0..k).map(|j| format!("attr_{j}")).collect(),
        occlusion_subset: subset,
    };
    if !ds.is_empty() {
        ds.validate()?;
    }
    Ok(ds)
}

/// Writes `manifest.csv` plus one PGM per sample under `dir/images/`.
/// Returns the manifest path.
pub fn export_manifest(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| OreoError::io(&img_dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    let mut header = vec!["path".to_string(), "identity".into(), "set_id".into()];
    header.extend((0..ds.n_attributes()).map(|j| format!("attr_{j}")));
    w.write_record(&header)?;
    let written = par::try_map_range(ds.len(), |i| {
        let s = &ds.samples[i];
        let rel = format!("images/{i:06}.pgm");
        image_io::write_pgm(&dir.join(&rel), &GrayImage::from_unit(s.width, s.height, &s.pixels))?;
        Ok::<_, OreoError>(rel)
    })?;
    for (s, rel) in ds.samples.iter().zip(written) {
        let mut rec = vec![rel, s.identity.to_string(), s.set_id.clone().unwrap_or_default()];
        rec.extend(s.attributes.iter().map(|b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| OreoError::io(&manifest, e))?;
    Ok(manifest)
}

/// Gallery / probe selection for one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeSplit {
    pub attribute: usize,
    /// Sample indices, one per eligible identity, in ascending identity order.
    pub gallery: Vec<usize>,
    pub probe_with: Vec<usize>,
    pub probe_without: Vec<usize>,
    /// Identities lacking two images without the attribute or one with it.
    pub excluded: Vec<u32>,
}

impl AttributeSplit {
    pub fn eligible(&self) -> usize {
        self.gallery.len()
    }
}

/// Enrols one image without the attribute per identity as gallery, and one
/// further image without / one image with the attribute as probes.
pub fn split_by_attribute(ds: &Dataset, attribute: usize, seed_root: u64) -> Result<AttributeSplit> {
    if attribute >= ds.n_attributes() {
        return Err(OreoError::InvalidConfig(format!(
            "attribute index {attribute} >= K = {}",
            ds.n_attributes()
        )));
    }
    let mut by_id: BTreeMap<u32, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let entry = by_id.entry(s.identity).or_default();
        if s.attributes[attribute] == 1 {
            entry.1.push(i);
        } else {
            entry.0.push(i);
        }
    }
    let mut split = AttributeSplit {
        attribute,
        gallery: Vec::new(),
        probe_with: Vec::new(),
        probe_without: Vec::new(),
        excluded: Vec::new(),
    };
    for (id, (mut without, with)) in by_id {
        if without.len() < 2 || with.is_empty() {
            split.excluded.push(id);
            continue;
        }
        let mut rng = seed::rng_for(seed_root, &[tag::SPLIT, attribute as u64, id as u64]);
        without.shuffle(&mut rng);
        split.gallery.push(without[0]);
        split.probe_without.push(without[1]);
        split.probe_with.push(with[rng.random_range(0..with.len())]);
    }
    if split.gallery.len() < 2 {
        return Err(OreoError::Protocol(format!(
            "attribute {attribute}: only {} eligible identities (need 2)",
            split.gallery.len()
        )));
    }
    Ok(split)
}
