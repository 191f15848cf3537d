//! Dataset file format: a self-describing text header (magic, version, the
//! generating spec as key=value lines) followed by a little-endian binary
//! payload. Saving the same dataset twice produces identical bytes.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, DatasetSpec, GeneratorKind, NoiseConfig, Split};
use crate::error::{Error, Result};

const MAGIC: &str = "distmatch-dataset";
const VERSION: u32 = 1;

fn fmt_floats(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(s: &str, path: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Format {
                path: path.to_string(),
                detail: format!("bad float {tok:?} in header"),
            })
        })
        .collect()
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let p = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(&p, e);

    let spec = &dataset.spec;
    writeln!(w, "{MAGIC} v{VERSION}").map_err(io_err)?;
    match spec.generator {
        GeneratorKind::Blobs { input_dim } => {
            writeln!(w, "generator=blobs").map_err(io_err)?;
            writeln!(w, "input_dim={input_dim}").map_err(io_err)?;
        }
        GeneratorKind::Patterns { side } => {
            writeln!(w, "generator=patterns").map_err(io_err)?;
            writeln!(w, "side={side}").map_err(io_err)?;
        }
    }
    writeln!(w, "classes={}", spec.classes).map_err(io_err)?;
    writeln!(w, "continuous_dim={}", spec.continuous_dim).map_err(io_err)?;
    writeln!(w, "n_train={}", spec.n_train).map_err(io_err)?;
    writeln!(w, "n_test={}", spec.n_test).map_err(io_err)?;
    let flat_anchors: Vec<f64> = spec.class_anchors.iter().flatten().copied().collect();
    writeln!(w, "anchors={}", fmt_floats(&flat_anchors)).map_err(io_err)?;
    writeln!(w, "anchor_jitter={}", spec.anchor_jitter).map_err(io_err)?;
    writeln!(w, "blob_spread={}", spec.blob_spread).map_err(io_err)?;
    writeln!(w, "seed={}", spec.seed).map_err(io_err)?;
    writeln!(w, "discrete_rates={}", fmt_floats(&dataset.noise.discrete_rates)).map_err(io_err)?;
    writeln!(
        w,
        "continuous_rates={}",
        fmt_floats(&dataset.noise.continuous_rates)
    )
    .map_err(io_err)?;
    writeln!(w, "noise_seed={}", dataset.noise.seed).map_err(io_err)?;
    writeln!(w, "feature_lo={}", dataset.feature_lo).map_err(io_err)?;
    writeln!(w, "feature_hi={}", dataset.feature_hi).map_err(io_err)?;
    writeln!(w, "---").map_err(io_err)?;

    for split in [&dataset.train, &dataset.test] {
        write_split(&mut w, split).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn write_split<W: Write>(w: &mut W, split: &Split) -> std::io::Result<()> {
    write_f64s(w, &split.features)?;
    write_u32s(w, &split.discrete_clean)?;
    write_f64s(w, &split.continuous_clean)?;
    w.write_all(&(split.discrete_noisy.len() as u32).to_le_bytes())?;
    for (labels, mask) in split.discrete_noisy.iter().zip(&split.discrete_flip_mask) {
        write_u32s(w, labels)?;
        write_mask(w, mask)?;
    }
    w.write_all(&(split.continuous_noisy.len() as u32).to_le_bytes())?;
    for (values, mask) in split
        .continuous_noisy
        .iter()
        .zip(&split.continuous_outlier_mask)
    {
        write_f64s(w, values)?;
        write_mask(w, mask)?;
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_u32s<W: Write>(w: &mut W, vals: &[usize]) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&(*v as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_mask<W: Write>(w: &mut W, mask: &[bool]) -> std::io::Result<()> {
    for m in mask {
        w.write_all(&[*m as u8])?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&p, e))?;

    // Split the text header from the binary payload at the "---" line.
    let sep = b"\n---\n";
    let cut = bytes
        .windows(sep.len())
        .position(|w| w == sep)
        .ok_or_else(|| Error::Format {
            path: p.clone(),
            detail: "missing header/payload separator".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..cut]).map_err(|_| Error::Format {
        path: p.clone(),
        detail: "header is not UTF-8".into(),
    })?;
    let payload = &bytes[cut + sep.len()..];

    let mut lines = header.lines();
    let magic_line = lines.next().unwrap_or_default();
    let (magic, version) = magic_line.split_once(" v").unwrap_or((magic_line, ""));
    if magic != MAGIC {
        return Err(Error::Format {
            path: p.clone(),
            detail: format!("bad magic {magic:?}"),
        });
    }
    if version != VERSION.to_string() {
        return Err(Error::Version {
            path: p.clone(),
            found: version.to_string(),
            expected: VERSION.to_string(),
        });
    }

    let mut kv = std::collections::HashMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |key: &str| -> Result<String> {
        kv.get(key).cloned().ok_or_else(|| Error::Format {
            path: p.clone(),
            detail: format!("missing header key {key}"),
        })
    };
    let get_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| Error::Format {
            path: p.clone(),
            detail: format!("bad integer for {key}"),
        })
    };
    let get_f64 = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| Error::Format {
            path: p.clone(),
            detail: format!("bad float for {key}"),
        })
    };

    let generator = match get("generator")?.as_str() {
        "blobs" => GeneratorKind::Blobs {
            input_dim: get_usize("input_dim")?,
        },
        "patterns" => GeneratorKind::Patterns {
            side: get_usize("side")?,
        },
        other => {
            return Err(Error::Format {
                path: p.clone(),
                detail: format!("unknown generator {other:?}"),
            })
        }
    };
    let classes = get_usize("classes")?;
    let continuous_dim = get_usize("continuous_dim")?;
    let flat_anchors = parse_floats(&get("anchors")?, &p)?;
    if flat_anchors.len() != classes * continuous_dim {
        return Err(Error::Format {
            path: p.clone(),
            detail: "anchor count does not match classes * continuous_dim".into(),
        });
    }
    let spec = DatasetSpec {
        generator,
        n_train: get_usize("n_train")?,
        n_test: get_usize("n_test")?,
        classes,
        continuous_dim,
        class_anchors: flat_anchors
            .chunks(continuous_dim)
            .map(|c| c.to_vec())
            .collect(),
        anchor_jitter: get_f64("anchor_jitter")?,
        blob_spread: get_f64("blob_spread")?,
        seed: get_usize("seed")? as u64,
    };
    let noise = NoiseConfig {
        discrete_rates: parse_floats(&get("discrete_rates")?, &p)?,
        continuous_rates: parse_floats(&get("continuous_rates")?, &p)?,
        seed: get_usize("noise_seed")? as u64,
    };

    let mut cursor = Cursor {
        bytes: payload,
        pos: 0,
        path: &p,
    };
    let train = read_split(&mut cursor, spec.n_train, spec.input_dim(), continuous_dim)?;
    let test = read_split(&mut cursor, spec.n_test, spec.input_dim(), continuous_dim)?;
    if cursor.pos != payload.len() {
        return Err(Error::Format {
            path: p.clone(),
            detail: format!("{} trailing bytes", payload.len() - cursor.pos),
        });
    }

    Ok(Dataset {
        spec,
        noise,
        train,
        test,
        feature_lo: get_f64("feature_lo")?,
        feature_hi: get_f64("feature_hi")?,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_string(),
                detail: format!(
                    "truncated payload: needed {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, count: usize) -> Result<Vec<usize>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    fn mask(&mut self, count: usize) -> Result<Vec<bool>> {
        let raw = self.take(count)?;
        Ok(raw.iter().map(|b| *b != 0).collect())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(self.u32s(1)?[0])
    }
}

fn read_split(c: &mut Cursor, n: usize, input_dim: usize, cont_dim: usize) -> Result<Split> {
    let features = c.f64s(n * input_dim)?;
    let discrete_clean = c.u32s(n)?;
    let continuous_clean = c.f64s(n * cont_dim)?;
    let d_sets = c.u32()?;
    let mut discrete_noisy = Vec::with_capacity(d_sets);
    let mut discrete_flip_mask = Vec::with_capacity(d_sets);
    for _ in 0..d_sets {
        discrete_noisy.push(c.u32s(n)?);
        discrete_flip_mask.push(c.mask(n)?);
    }
    let c_sets = c.u32()?;
    let mut continuous_noisy = Vec::with_capacity(c_sets);
    let mut continuous_outlier_mask = Vec::with_capacity(c_sets);
    for _ in 0..c_sets {
        continuous_noisy.push(c.f64s(n * cont_dim)?);
        continuous_outlier_mask.push(c.mask(n)?);
    }
    Ok(Split {
        n,
        features,
        discrete_clean,
        continuous_clean,
        discrete_noisy,
        discrete_flip_mask,
        continuous_noisy,
        continuous_outlier_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate, DatasetSpec, NoiseConfig};
    use super::*;

    fn small_dataset(seed: u64) -> Dataset {
        let mut spec = DatasetSpec::blobs_default(seed);
        spec.n_train = 64;
        spec.n_test = 32;
        let noise = NoiseConfig {
            discrete_rates: vec![0.2, 0.4],
            continuous_rates: vec![0.3],
            seed: seed + 1,
        };
        generate(&spec, &noise).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        let ds = small_dataset(1);
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ds");
        let p2 = dir.path().join("b.ds");
        let ds = small_dataset(2);
        save_dataset(&ds, &p1).unwrap();
        save_dataset(&ds, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn regenerating_from_stored_spec_matches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        let ds = small_dataset(3);
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        let regen = generate(&loaded.spec, &loaded.noise).unwrap();
        assert_eq!(loaded, regen);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        save_dataset(&small_dataset(4), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(crate::Error::Format { .. })
        ));
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        save_dataset(&small_dataset(5), &path).unwrap();
        let text = std::fs::read(&path).unwrap();
        let mut patched = text.clone();
        // "distmatch-dataset v1" -> v9
        let pos = text.windows(2).position(|w| w == b"v1").unwrap();
        patched[pos + 1] = b'9';
        std::fs::write(&path, patched).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(crate::Error::Version { .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ds");
        save_dataset(&small_dataset(6), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
