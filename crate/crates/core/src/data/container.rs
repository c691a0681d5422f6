//! Dataset container: a text header followed by a little-endian payload.
//!
//! ```text
//! DPKITDS 1
//! count 5000
//! dims 3 32 32
//! split train
//! provenance perturbed
//! mean 0.49 0.48 0.44
//! std 0.24 0.24 0.26
//! end
//! ```
//!
//! After `end\n` come `count` labels as `u64` and then every pixel as `f64`,
//! all little-endian. Header floats use shortest round-trip formatting, so a
//! write followed by a read reproduces the dataset bit for bit.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, Normalization, Provenance, Split};
use crate::autograd::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "DPKITDS 1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write_to(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_to<W: Write>(dataset: &Dataset, out: &mut W) -> Result<()> {
    let shape = dataset.images().shape();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "count {}", shape[0])?;
    writeln!(out, "dims {} {} {}", shape[1], shape[2], shape[3])?;
    writeln!(out, "split {}", dataset.split.as_str())?;
    writeln!(out, "provenance {}", dataset.provenance.as_str())?;
    writeln!(out, "mean {}", join(&dataset.normalization.mean))?;
    writeln!(out, "std {}", join(&dataset.normalization.std))?;
    writeln!(out, "end")?;
    for &l in dataset.labels() {
        out.write_all(&(l as u64).to_le_bytes())?;
    }
    for v in dataset.images().data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_from(BufReader::new(std::fs::File::open(path)?))
}

pub fn read_from<R: BufRead>(mut input: R) -> Result<Dataset> {
    let mut offset = 0u64;
    let mut line = String::new();
    let mut field = |input: &mut R, key: &str| -> Result<String> {
        line.clear();
        let read = input.read_line(&mut line)?;
        let start = offset;
        offset += read as u64;
        let text = line.trim_end();
        let corrupt = |reason: String| Error::CorruptData { offset: start, reason };
        if key.is_empty() {
            return Ok(text.to_string());
        }
        match text.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.to_string()),
            _ => Err(corrupt(format!("expected `{key}` header line, got `{text}`"))),
        }
    };
    if field(&mut input, "")? != MAGIC {
        return Err(Error::CorruptData {
            offset: 0,
            reason: "not a dpkit dataset container".into(),
        });
    }
    let bad = |what: &str| Error::Data(format!("malformed `{what}` header"));
    let count: usize = field(&mut input, "count")?.parse().map_err(|_| bad("count"))?;
    let dims: Vec<usize> = field(&mut input, "dims")?
        .split_whitespace()
        .map(|d| d.parse().map_err(|_| bad("dims")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(bad("dims"));
    }
    let split = Split::parse(&field(&mut input, "split")?).ok_or_else(|| bad("split"))?;
    let provenance = Provenance::parse(&field(&mut input, "provenance")?).ok_or_else(|| bad("provenance"))?;
    let floats = |text: String, what: &str| -> Result<Vec<f64>> {
        text.split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(what)))
            .collect()
    };
    let mean = floats(field(&mut input, "mean")?, "mean")?;
    let std = floats(field(&mut input, "std")?, "std")?;
    if field(&mut input, "")? != "end" {
        return Err(bad("end"));
    }
    let pixels = count * dims.iter().product::<usize>();
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    let want = 8 * (count + pixels);
    if payload.len() != want {
        return Err(Error::CorruptData {
            offset: offset + payload.len().min(want) as u64,
            reason: format!("payload has {} bytes, header implies {want}", payload.len()),
        });
    }
    let (label_bytes, pixel_bytes) = payload.split_at(8 * count);
    let labels = label_bytes
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
        .collect();
    let data = pixel_bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let images = Tensor::from_vec(vec![count, dims[0], dims[1], dims[2]], data)?;
    Dataset::new(images, labels, split, provenance, Normalization { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;

    #[test]
    fn round_trip_is_exact() {
        let d = make_synthetic(3, 2, 1.5, 4).unwrap();
        let mut buf = Vec::new();
        write_to(&d, &mut buf).unwrap();
        let back = read_from(&buf[..]).unwrap();
        assert_eq!(back, d);
        let bits = |x: &Dataset| x.images().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&d));
    }

    #[test]
    fn truncated_payload_rejected() {
        let d = make_synthetic(2, 1, 1.0, 4).unwrap();
        let mut buf = Vec::new();
        write_to(&d, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_from(&buf[..]), Err(Error::CorruptData { .. })));
        assert!(matches!(read_from(&b"hello\n"[..]), Err(Error::CorruptData { offset: 0, .. })));
    }
}
