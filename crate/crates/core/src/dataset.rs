//! Tissue optical properties at 670 nm, the five reflectance dataset
//! definitions, planning of per-image records and batch generation into
//! `<out>/<dataset>/{train,test}/*.f32` plus `<out>/<dataset>/manifest.jsonl`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{f32_bytes, ImageSidecar};
use crate::phase::HgPhase;
use crate::transport::{simulate, GridSpec, OpticalMedium, SimulationConfig, Tallies};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatteringCategory {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tissue {
    pub name: &'static str,
    /// cm⁻¹
    pub mu_a: f64,
    /// Reduced scattering coefficient, cm⁻¹.
    pub mu_s_prime: f64,
    pub category: ScatteringCategory,
}

impl Tissue {
    /// File-name form of the tissue name, e.g. `heart_wall`.
    pub fn slug(&self) -> String {
        self.name.to_lowercase().replace(' ', "_")
    }
}

const fn tissue(name: &'static str, mu_a: f64, mu_s_prime: f64, category: ScatteringCategory) -> Tissue {
    Tissue {
        name,
        mu_a,
        mu_s_prime,
        category,
    }
}

use ScatteringCategory::{High, Low};

static TISSUES: [Tissue; 11] = [
    tissue("Adipose", 0.038, 12.077, High),
    tissue("Bone", 0.603, 24.953, High),
    tissue("Bowel", 0.117, 11.490, High),
    tissue("Heart wall", 0.583, 9.639, High),
    tissue("Kidneys", 0.654, 22.530, High),
    tissue("Liver and spleen", 3.490, 6.781, Low),
    tissue("Lung", 1.948, 21.739, High),
    tissue("Muscle", 0.863, 4.291, Low),
    tissue("Skin", 0.699, 22.190, High),
    tissue("Stomach wall", 0.113, 14.369, High),
    tissue("Whole blood", 11.621, 18.140, Low),
];

pub fn tissue_table() -> &'static [Tissue] {
    &TISSUES
}

pub fn find_tissue(name: &str) -> Option<&'static Tissue> {
    TISSUES
        .iter()
        .find(|t| t.name.eq_ignore_ascii_case(name) || t.slug() == name)
}

/// Scattering coefficient `μs = μs′ / (1 − g)`.
pub fn mus_from(mu_s_prime: f64, g: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g) {
        return Err(Error::invalid(format!("g = {g} must lie in [0, 1)")));
    }
    Ok(mu_s_prime / (1.0 - g))
}

pub const TRAIN_G: [f64; 4] = [0.65, 0.75, 0.85, 0.95];
pub const TEST_G: [f64; 4] = [0.6, 0.7, 0.8, 0.9];
pub const FULL_PHOTONS: u64 = 10_000_000;
pub const FULL_TRAIN_SAMPLES: usize = 200;
pub const FULL_TEST_SAMPLES: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub fov_mm: f64,
    pub delta_r_mm: f64,
    pub n_r: usize,
    pub image_side: usize,
    pub train_g: Vec<f64>,
    pub test_g: Vec<f64>,
    pub samples_per_config_train: usize,
    pub samples_per_config_test: usize,
    pub photons_per_image: u64,
}

impl DatasetSpec {
    fn table_row(name: &str, delta_r_mm: f64, n_r: usize) -> Self {
        Self {
            name: name.to_string(),
            fov_mm: 2.0 * n_r as f64 * delta_r_mm,
            delta_r_mm,
            n_r,
            image_side: 2 * n_r - 1,
            train_g: TRAIN_G.to_vec(),
            test_g: TEST_G.to_vec(),
            samples_per_config_train: FULL_TRAIN_SAMPLES,
            samples_per_config_test: FULL_TEST_SAMPLES,
            photons_per_image: FULL_PHOTONS,
        }
    }

    /// One of `DS1` … `DS5`.
    pub fn named(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "DS1" => Ok(Self::table_row("DS1", 0.02, 50)),
            "DS2" => Ok(Self::table_row("DS2", 0.02, 100)),
            "DS3" => Ok(Self::table_row("DS3", 0.02, 150)),
            "DS4" => Ok(Self::table_row("DS4", 0.01, 200)),
            "DS5" => Ok(Self::table_row("DS5", 0.04, 50)),
            _ => Err(Error::invalid(format!("unknown dataset `{name}` (expected DS1–DS5)"))),
        }
    }

    pub fn all() -> Vec<Self> {
        ["DS1", "DS2", "DS3", "DS4", "DS5"]
            .iter()
            .map(|n| Self::named(n).unwrap())
            .collect()
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            delta_r_mm: self.delta_r_mm,
            n_r: self.n_r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        if self.image_side != self.grid().side() {
            return Err(Error::invalid(format!(
                "image side {} ≠ 2·{}−1",
                self.image_side, self.n_r
            )));
        }
        if (self.fov_mm - self.grid().fov_mm()).abs() > 1e-9 {
            return Err(Error::invalid(format!("FOV {} ≠ 2·NrΔr", self.fov_mm)));
        }
        if self.photons_per_image == 0 {
            return Err(Error::invalid("photons per image must be positive"));
        }
        for g in self.train_g.iter().chain(&self.test_g) {
            if !(0.0..1.0).contains(g) {
                return Err(Error::invalid(format!("g = {g} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Shrinks photons and per-configuration sample counts by `scale`,
    /// rounding up and keeping at least one of each.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::invalid(format!("scale factor {scale} must lie in (0, 1]")));
        }
        let count = |n: usize| ((n as f64 * scale).ceil() as usize).max(1);
        Ok(Self {
            samples_per_config_train: count(self.samples_per_config_train),
            samples_per_config_test: count(self.samples_per_config_test),
            photons_per_image: ((self.photons_per_image as f64 * scale).ceil() as u64).max(1),
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    /// Image path relative to the dataset directory.
    pub path: String,
    pub tissue: String,
    pub mu_a: f64,
    pub mu_s: f64,
    pub g: f64,
    pub seed: u64,
    pub split: Split,
    pub dataset: String,
    pub sample_index: usize,
    pub n_photons: u64,
    pub delta_r_mm: f64,
    pub n_r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tallies: Option<Tallies>,
}

impl SampleRecord {
    pub fn medium(&self) -> OpticalMedium {
        OpticalMedium::new(self.mu_a, self.mu_s, self.g)
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            delta_r_mm: self.delta_r_mm,
            n_r: self.n_r,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed for one record, stable under partial regeneration.
pub fn record_seed(master: u64, dataset: &str, split: Split, tissue: usize, g_index: usize, sample: usize) -> u64 {
    [
        fnv1a(dataset),
        split as u64,
        tissue as u64,
        g_index as u64,
        sample as u64,
    ]
    .iter()
    .fold(splitmix64(master), |h, v| splitmix64(h ^ splitmix64(*v)))
}

/// Enumerates every record of a dataset in tissue, split, g, sample order.
pub fn plan_dataset(spec: &DatasetSpec, master_seed: u64) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        let (gs, per) = match split {
            Split::Train => (&spec.train_g, spec.samples_per_config_train),
            Split::Test => (&spec.test_g, spec.samples_per_config_test),
        };
        for (ti, t) in TISSUES.iter().enumerate() {
            for (gi, g) in gs.iter().enumerate() {
                let mu_s = mus_from(t.mu_s_prime, *g)?;
                for sample in 0..per {
                    out.push(SampleRecord {
                        path: format!("{}/{}_{:.2}_{}.f32", split.as_str(), t.slug(), g, sample),
                        tissue: t.name.to_string(),
                        mu_a: t.mu_a,
                        mu_s,
                        g: *g,
                        seed: record_seed(master_seed, &spec.name, split, ti, gi, sample),
                        split,
                        dataset: spec.name.clone(),
                        sample_index: sample,
                        n_photons: spec.photons_per_image,
                        delta_r_mm: spec.delta_r_mm,
                        n_r: spec.n_r,
                        sha256: None,
                        tallies: None,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub scale: f64,
    pub master_seed: u64,
    /// Concurrent simulations.
    pub workers: usize,
    pub n_tissue: f64,
    pub n_ambient: f64,
    /// Photons per image, replacing the scaled count.
    pub photons: Option<u64>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            master_seed: 0,
            workers: 1,
            n_tissue: crate::transport::DEFAULT_N_TISSUE,
            n_ambient: crate::transport::DEFAULT_N_AMBIENT,
            photons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub dataset_dir: PathBuf,
    pub records: Vec<SampleRecord>,
    pub simulated: usize,
    pub skipped: usize,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            record: format!("{}:{}", path.display(), i + 1),
            source: Box::new(e.into()),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn already_done(root: &Path, rec: &SampleRecord, previous: &HashMap<String, SampleRecord>) -> Option<SampleRecord> {
    let prev = previous.get(&rec.path)?;
    if prev.seed != rec.seed || prev.n_photons != rec.n_photons {
        return None;
    }
    let want = prev.sha256.as_ref()?;
    let bytes = fs::read(root.join(&rec.path)).ok()?;
    (sha256_hex(&bytes) == *want).then(|| prev.clone())
}

fn simulate_record(root: &Path, rec: &SampleRecord, opts: &GenerateOptions) -> Result<SampleRecord> {
    let wrap = |e: Error| Error::Record {
        record: rec.path.clone(),
        source: Box::new(e),
    };
    let mut medium = rec.medium();
    medium.n_tissue = opts.n_tissue;
    medium.n_ambient = opts.n_ambient;
    let phase = HgPhase::new(rec.g).map_err(wrap)?;
    let cfg = SimulationConfig::new(rec.n_photons, rec.seed);
    let image = simulate(&medium, &phase, &rec.grid(), &cfg).map_err(wrap)?;
    let balance = image.tallies().energy_sum();
    if (balance - 1.0).abs() > 1e-3 {
        return Err(wrap(Error::SimulationIntegrity {
            photon: rec.n_photons,
            detail: format!("energy tallies sum to {balance}"),
        }));
    }
    let bytes = f32_bytes(image.pixels());
    let path = root.join(&rec.path);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
    }
    fs::write(&path, &bytes).map_err(|e| wrap(Error::io(&path, e)))?;
    let sidecar = ImageSidecar::new(&medium, &image, rec.n_photons, rec.seed);
    crate::io::write_json(&crate::io::sidecar_path(&path), &sidecar).map_err(wrap)?;
    Ok(SampleRecord {
        sha256: Some(sha256_hex(&bytes)),
        tallies: Some(*image.tallies()),
        ..rec.clone()
    })
}

/// Simulates every planned record into `out_dir/<dataset>/`, skipping images
/// whose checksum matches a previous manifest entry.
pub fn generate(spec: &DatasetSpec, out_dir: &Path, opts: &GenerateOptions) -> Result<GenerateReport> {
    let mut spec = spec.scaled(opts.scale)?;
    if let Some(n) = opts.photons {
        if n == 0 {
            return Err(Error::invalid("photons per image must be at least 1"));
        }
        spec.photons_per_image = n;
    }
    let plan = plan_dataset(&spec, opts.master_seed)?;
    let root = out_dir.join(&spec.name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let manifest_path = root.join(MANIFEST_FILE);
    // Progress goes to a side file renamed over the manifest at the end, so an
    // interrupted run keeps every finished record from both files.
    let partial_path = root.join(format!("{MANIFEST_FILE}.partial"));
    let mut previous: HashMap<String, SampleRecord> = HashMap::new();
    if manifest_path.exists() {
        previous.extend(read_manifest(&manifest_path)?.into_iter().map(|r| (r.path.clone(), r)));
    }
    // A crash can leave a torn last line; unparsable lines are simply redone.
    if let Ok(text) = fs::read_to_string(&partial_path) {
        let recs = text.lines().filter_map(|l| serde_json::from_str::<SampleRecord>(l).ok());
        previous.extend(recs.map(|r| (r.path.clone(), r)));
    }

    let file = fs::File::create(&partial_path).map_err(|e| Error::io(&partial_path, e))?;
    let mut writer = BufWriter::new(file);
    let workers = opts.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;

    let mut records = Vec::with_capacity(plan.len());
    let (mut simulated, mut skipped) = (0, 0);
    for wave in plan.chunks(workers) {
        let done: Vec<Result<(SampleRecord, bool)>> = pool.install(|| {
            wave.par_iter()
                .map(|rec| match already_done(&root, rec, &previous) {
                    Some(r) => Ok((r, false)),
                    None => simulate_record(&root, rec, opts).map(|r| (r, true)),
                })
                .collect()
        });
        for r in done {
            let (rec, fresh) = r?;
            if fresh {
                simulated += 1;
            } else {
                skipped += 1;
            }
            let line = serde_json::to_string(&rec)?;
            writeln!(writer, "{line}").map_err(|e| Error::io(&partial_path, e))?;
            records.push(rec);
        }
        writer.flush().map_err(|e| Error::io(&partial_path, e))?;
    }
    drop(writer);
    fs::rename(&partial_path, &manifest_path).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(GenerateReport {
        dataset_dir: root,
        records,
        simulated,
        skipped,
    })
}
