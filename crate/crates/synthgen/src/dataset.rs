//! Length-prefixed binary dataset container with a versioned header and
//! a human-readable manifest. The layout is documented field by field in
//! `docs/formats.md`; all numbers are little-endian and floats round-trip
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use mjp_core::{AdjacencyMatrix, ObservedSeries, ProbabilityVector, RateMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::GeneratorConfig;
use crate::error::{GenError, Result};
use crate::sample::{generate_record, DatasetRecord, Pi0Kind};

const MAGIC: &[u8; 8] = b"MJPDST01";
const FORMAT_VERSION: u32 = 1;

/// Manifest written next to every dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub record_count: u64,
    pub c_max: usize,
    pub sha256: String,
    pub config: GeneratorConfig,
}

/// Manifest path convention: `<dataset>.manifest.toml`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut os = dataset.as_os_str().to_owned();
    os.push(".manifest.toml");
    PathBuf::from(os)
}

/// Generate all records of `config` in parallel (keyed by record id) and
/// write the container plus its manifest. Returns the manifest.
pub fn generate_dataset(config: &GeneratorConfig, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let ids: Vec<u64> = (0..config.n_processes as u64).collect();
    let records: Vec<DatasetRecord> = ids
        .par_iter()
        .map(|&id| generate_record(config.state_count_of(id)?, config, id))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(config, &records, out)
}

/// Serialize records to the container format and write the manifest.
pub fn write_dataset(
    config: &GeneratorConfig,
    records: &[DatasetRecord],
    out: &Path,
) -> Result<DatasetManifest> {
    let config_echo =
        toml::to_string(config).map_err(|e| GenError::Manifest(format!("config echo: {e}")))?;

    let mut file = BufWriter::new(File::create(out)?);
    let mut hasher = Sha256::new();
    let mut sink = |buf: &[u8], file: &mut BufWriter<File>| -> Result<()> {
        hasher.update(buf);
        file.write_all(buf)?;
        Ok(())
    };

    sink(MAGIC, &mut file)?;
    sink(&FORMAT_VERSION.to_le_bytes(), &mut file)?;
    sink(&(config.c_max as u16).to_le_bytes(), &mut file)?;
    sink(&(records.len() as u64).to_le_bytes(), &mut file)?;
    sink(&(config_echo.len() as u32).to_le_bytes(), &mut file)?;
    sink(config_echo.as_bytes(), &mut file)?;

    for rec in records {
        let blob = encode_record(rec, config.c_max);
        sink(&(blob.len() as u64).to_le_bytes(), &mut file)?;
        sink(&blob, &mut file)?;
    }
    file.flush()?;
    drop(file);

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        record_count: records.len() as u64,
        c_max: config.c_max,
        sha256: hex(&hasher.finalize()),
        config: config.clone(),
    };
    let manifest_text = toml::to_string_pretty(&manifest)
        .map_err(|e| GenError::Manifest(format!("serialize: {e}")))?;
    std::fs::write(manifest_path(out), manifest_text)?;
    Ok(manifest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn encode_record(rec: &DatasetRecord, c_max: usize) -> Vec<u8> {
    let c = rec.state_count();
    let mut b = Vec::new();
    b.extend_from_slice(&rec.process_id.to_le_bytes());
    b.extend_from_slice(&(c as u16).to_le_bytes());
    b.push(match rec.pi0_kind {
        Pi0Kind::Stationary => 0,
        Pi0Kind::Dirichlet => 1,
    });
    b.extend_from_slice(&rec.alpha.to_le_bytes());
    b.extend_from_slice(&rec.beta.to_le_bytes());
    for i in 0..c {
        for j in 0..c {
            b.push(rec.adjacency.get(i, j) as u8);
        }
    }
    // Ground-truth rates stored as the top-left block of a zero-padded
    // c_max x c_max matrix, the training-target convention.
    for i in 0..c_max {
        for j in 0..c_max {
            let v = if i < c && j < c { rec.rate_matrix.get(i, j) } else { 0.0 };
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    for i in 0..c {
        b.extend_from_slice(&rec.pi0.get(i).to_le_bytes());
    }
    b.extend_from_slice(&(rec.series.len() as u32).to_le_bytes());
    for s in rec.series.iter() {
        b.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for &t in s.times() {
            b.extend_from_slice(&t.to_le_bytes());
        }
        for &label in s.labels() {
            b.extend_from_slice(&(label as u16).to_le_bytes());
        }
    }
    match &rec.clean_series {
        None => b.push(0),
        Some(clean) => {
            b.push(1);
            for labels in clean {
                b.extend_from_slice(&(labels.len() as u32).to_le_bytes());
                for &label in labels {
                    b.extend_from_slice(&(label as u16).to_le_bytes());
                }
            }
        }
    }
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(GenError::Corrupt(format!(
                "record blob truncated at byte {} (+{n})",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_record(blob: &[u8], c_max: usize) -> Result<DatasetRecord> {
    let mut cur = Cursor { buf: blob, pos: 0 };
    let process_id = cur.u64()?;
    let c = cur.u16()? as usize;
    let pi0_kind = match cur.u8()? {
        0 => Pi0Kind::Stationary,
        1 => Pi0Kind::Dirichlet,
        k => return Err(GenError::Corrupt(format!("unknown pi0 kind {k}"))),
    };
    let alpha = cur.f64()?;
    let beta = cur.f64()?;

    let mut adj = vec![false; c * c];
    for slot in adj.iter_mut() {
        *slot = cur.u8()? != 0;
    }
    let adjacency = AdjacencyMatrix::new(c, adj)?;

    let mut padded = vec![0.0f64; c_max * c_max];
    for slot in padded.iter_mut() {
        *slot = cur.f64()?;
    }
    let mut block = vec![0.0f64; c * c];
    for i in 0..c {
        for j in 0..c {
            block[i * c + j] = padded[i * c_max + j];
        }
    }
    let rate_matrix = RateMatrix::new(c, block)?;

    let mut pi0 = vec![0.0f64; c];
    for slot in pi0.iter_mut() {
        *slot = cur.f64()?;
    }
    let pi0 = ProbabilityVector::new(pi0)?;

    let n_series = cur.u32()? as usize;
    let mut series = Vec::with_capacity(n_series);
    for _ in 0..n_series {
        let len = cur.u32()? as usize;
        let mut times = Vec::with_capacity(len);
        for _ in 0..len {
            times.push(cur.f64()?);
        }
        let mut labels = Vec::with_capacity(len);
        for _ in 0..len {
            labels.push(cur.u16()? as usize);
        }
        series.push(ObservedSeries::new(times, labels)?);
    }

    let clean_series = if cur.u8()? == 1 {
        let mut clean = Vec::with_capacity(n_series);
        for _ in 0..n_series {
            let len = cur.u32()? as usize;
            let mut labels = Vec::with_capacity(len);
            for _ in 0..len {
                labels.push(cur.u16()? as usize);
            }
            clean.push(labels);
        }
        Some(clean)
    } else {
        None
    };

    if cur.pos != blob.len() {
        return Err(GenError::Corrupt(format!(
            "record blob has {} trailing bytes",
            blob.len() - cur.pos
        )));
    }

    Ok(DatasetRecord {
        process_id,
        rate_matrix,
        adjacency,
        pi0,
        pi0_kind,
        alpha,
        beta,
        series,
        clean_series,
    })
}

/// Read a dataset container back into memory.
pub fn read_dataset(path: &Path) -> Result<(GeneratorConfig, Vec<DatasetRecord>)> {
    let mut file = BufReader::new(File::open(path)?);
    let mut head = [0u8; 8];
    file.read_exact(&mut head)?;
    if &head != MAGIC {
        return Err(GenError::Corrupt("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(GenError::Corrupt(format!("unsupported version {version}")));
    }
    let mut u16buf = [0u8; 2];
    file.read_exact(&mut u16buf)?;
    let c_max = u16::from_le_bytes(u16buf) as usize;
    let mut u64buf = [0u8; 8];
    file.read_exact(&mut u64buf)?;
    let n_records = u64::from_le_bytes(u64buf);
    file.read_exact(&mut u32buf)?;
    let config_len = u32::from_le_bytes(u32buf) as usize;
    let mut config_bytes = vec![0u8; config_len];
    file.read_exact(&mut config_bytes)?;
    let config: GeneratorConfig = toml::from_str(
        std::str::from_utf8(&config_bytes)
            .map_err(|e| GenError::Corrupt(format!("config echo not UTF-8: {e}")))?,
    )
    .map_err(|e| GenError::Corrupt(format!("config echo: {e}")))?;

    let mut records = Vec::with_capacity(n_records as usize);
    for _ in 0..n_records {
        file.read_exact(&mut u64buf)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut blob = vec![0u8; len];
        file.read_exact(&mut blob)?;
        records.push(decode_record(&blob, c_max)?);
    }
    Ok((config, records))
}

/// Verify a dataset file against its manifest (checksum and counts).
pub fn verify_dataset(path: &Path) -> Result<DatasetManifest> {
    let manifest_text = std::fs::read_to_string(manifest_path(path))?;
    let manifest: DatasetManifest =
        toml::from_str(&manifest_text).map_err(|e| GenError::Manifest(format!("parse: {e}")))?;
    let got = file_sha256(path)?;
    if got != manifest.sha256 {
        return Err(GenError::ChecksumMismatch {
            expected: manifest.sha256,
            got,
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StateQuota;

    fn smoke_config(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            state_counts: vec![
                StateQuota { states: 2, count: 4 },
                StateQuota { states: 3, count: 3 },
                StateQuota { states: 6, count: 3 },
            ],
            n_processes: 10,
            paths_per_process: 5,
            base_grid_len: 20,
            master_seed: seed,
            store_clean: true,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn smoke_run_writes_verifiable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("smoke.mjpd");
        let manifest = generate_dataset(&smoke_config(17), &path).unwrap();
        assert_eq!(manifest.record_count, 10);
        let verified = verify_dataset(&path).unwrap();
        assert_eq!(verified.sha256, manifest.sha256);

        let (config, records) = read_dataset(&path).unwrap();
        assert_eq!(config, smoke_config(17));
        assert_eq!(records.len(), 10);
        // Quotas honored exactly, in order.
        let counts: Vec<usize> = records.iter().map(|r| r.state_count()).collect();
        assert_eq!(counts, vec![2, 2, 2, 2, 3, 3, 3, 6, 6, 6]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.mjpd");
        let config = smoke_config(41);
        generate_dataset(&config, &path).unwrap();
        let (_, records) = read_dataset(&path).unwrap();
        let direct: Vec<_> = (0..10)
            .map(|id| generate_record(config.state_count_of(id).unwrap(), &config, id).unwrap())
            .collect();
        assert_eq!(records, direct);
    }

    #[test]
    fn regeneration_gives_identical_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.mjpd");
        let p2 = dir.path().join("b.mjpd");
        let m1 = generate_dataset(&smoke_config(7), &p1).unwrap();
        let m2 = generate_dataset(&smoke_config(7), &p2).unwrap();
        assert_eq!(m1.sha256, m2.sha256);
        let m3 = generate_dataset(&smoke_config(8), &dir.path().join("c.mjpd")).unwrap();
        assert_ne!(m1.sha256, m3.sha256);
    }

    #[test]
    fn corrupt_file_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mjpd");
        generate_dataset(&smoke_config(3), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            verify_dataset(&path),
            Err(GenError::ChecksumMismatch { .. })
        ));
    }
}
