//! File formats: CSV for datasets and tables, JSON for everything else.
//! Every CSV starts with a `# config_hash=<hex> seed=<n>` comment line and a
//! header row; readers skip `#` comments, so the files round-trip.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use lrvb_core::models::gmm::GmmDataset;
use lrvb_core::models::normal_poisson::NpDataset;
use lrvb_core::models::random_effects::ReDataset;

/// Generating values bundled with provenance, written next to each dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthArtifact<T> {
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub truth: T,
}

/// Normal-Poisson generating values (the latent log rates are the `z`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpTruth {
    pub beta: f64,
    pub tau: f64,
    pub z: Vec<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// CSV writer with the provenance comment already emitted.
pub fn csv_writer(path: &Path, hash: &str, seed: u64) -> Result<csv::Writer<File>> {
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(file, "# config_hash={hash} seed={seed}")?;
    Ok(csv::Writer::from_writer(file))
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[String]) -> Result<()> {
    let got: Vec<&str> = got.iter().collect();
    if got != want.iter().map(String::as_str).collect::<Vec<_>>() {
        bail!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            want,
            got
        );
    }
    Ok(())
}

pub fn write_np_csv(path: &Path, data: &NpDataset, hash: &str, seed: u64) -> Result<()> {
    let mut w = csv_writer(path, hash, seed)?;
    w.write_record(["y", "x"])?;
    for i in 0..data.len() {
        w.write_record(&[data.y[i].to_string(), data.x[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_np_csv(path: &Path) -> Result<NpDataset> {
    let mut r = csv_reader(path)?;
    check_header(path, r.headers()?, &["y".into(), "x".into()])?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for record in r.deserialize() {
        let (yi, xi): (u64, f64) = record.with_context(|| format!("parsing {}", path.display()))?;
        y.push(yi);
        x.push(xi);
    }
    let data = NpDataset { x, y };
    data.validate()?;
    Ok(data)
}

/// Columns: `y`, then the covariates `x1..xP`, then the random-effect
/// loading `r`, then the group index `k`.
pub fn write_re_csv(path: &Path, data: &ReDataset, hash: &str, seed: u64) -> Result<()> {
    let mut w = csv_writer(path, hash, seed)?;
    let p = data.num_covariates();
    let mut header = vec!["y".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.push("r".into());
    header.push("k".into());
    w.write_record(&header)?;
    for n in 0..data.len() {
        let mut row = vec![data.y[n].to_string()];
        row.extend(data.x[n].iter().map(f64::to_string));
        row.push(data.r[n].to_string());
        row.push(data.group[n].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_re_csv(path: &Path) -> Result<ReDataset> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 4 {
        bail!("{}: expected columns y,x1,...,r,k", path.display());
    }
    let p = headers.len() - 3;
    let mut want = vec!["y".to_string()];
    want.extend((1..=p).map(|j| format!("x{j}")));
    want.push("r".into());
    want.push("k".into());
    check_header(path, &headers, &want)?;

    let (mut y, mut rr, mut group, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for record in r.records() {
        let record = record.with_context(|| format!("parsing {}", path.display()))?;
        let field = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .with_context(|| format!("{}: bad number {:?}", path.display(), &record[i]))
        };
        y.push(field(0)?);
        x.push((0..p).map(|j| field(1 + j)).collect::<Result<Vec<f64>>>()?);
        rr.push(field(1 + p)?);
        group.push(
            record[2 + p]
                .parse::<usize>()
                .with_context(|| format!("{}: bad group {:?}", path.display(), &record[2 + p]))?,
        );
    }
    let num_groups = group.iter().max().map_or(0, |&g| g + 1);
    let data = ReDataset { y, x, r: rr, group, num_groups };
    data.validate()?;
    Ok(data)
}

pub fn write_gmm_csv(path: &Path, data: &GmmDataset, hash: &str, seed: u64) -> Result<()> {
    let mut w = csv_writer(path, hash, seed)?;
    let p = data.dim();
    w.write_record((1..=p).map(|j| format!("x{j}")))?;
    for row in &data.x {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gmm_csv(path: &Path) -> Result<GmmDataset> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let p = headers.len();
    let want: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    check_header(path, &headers, &want)?;

    let mut x = Vec::new();
    for record in r.records() {
        let record = record.with_context(|| format!("parsing {}", path.display()))?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .with_context(|| format!("{}: bad number {f:?}", path.display()))
            })
            .collect::<Result<Vec<f64>>>()?;
        x.push(row);
    }
    let data = GmmDataset { x };
    data.validate()?;
    Ok(data)
}
