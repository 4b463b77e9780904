//! Sample export formats.
//!
//! CSV: header `sample_id,role,t,value`; `role` is `history` or `target`
//! and `t` runs continuously from the first history point through the
//! target.
//!
//! Binary (`SPL1`): the 4 magic bytes, a little-endian `u32` sample count,
//! then per sample `u32` history length, `u32` target length, and the
//! history followed by the target as little-endian `f64`.

use std::io::{Read, Write};

use super::{PriorError, SyntheticSample};

const MAGIC: &[u8; 4] = b"SPL1";

/// A sample as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub history: Vec<f64>,
    pub target: Vec<f64>,
}

impl From<&SyntheticSample> for SampleRecord {
    fn from(s: &SyntheticSample) -> Self {
        Self { history: s.history.clone(), target: s.target.clone() }
    }
}

pub fn write_csv<W: Write>(samples: &[SyntheticSample], out: W) -> Result<(), PriorError> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| PriorError::Format(e.to_string());
    w.write_record(["sample_id", "role", "t", "value"]).map_err(map)?;
    for (id, s) in samples.iter().enumerate() {
        let rows = s
            .history
            .iter()
            .map(|v| ("history", v))
            .chain(s.target.iter().map(|v| ("target", v)));
        for (t, (role, v)) in rows.enumerate() {
            w.write_record([id.to_string(), role.to_string(), t.to_string(), v.to_string()]).map_err(map)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SampleRecord>, PriorError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<SampleRecord> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| PriorError::Format(e.to_string()))?;
        let bad = || PriorError::Format(format!("malformed sample row {}", line + 2));
        if rec.len() != 4 {
            return Err(bad());
        }
        let id: usize = rec[0].parse().map_err(|_| bad())?;
        let value: f64 = rec[3].parse().map_err(|_| bad())?;
        if id == out.len() {
            out.push(SampleRecord { history: vec![], target: vec![] });
        } else if id + 1 != out.len() {
            return Err(bad());
        }
        let s = out.last_mut().expect("pushed above");
        match &rec[1] {
            "history" => s.history.push(value),
            "target" => s.target.push(value),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

pub fn write_binary<W: Write>(samples: &[SyntheticSample], mut out: W) -> Result<(), PriorError> {
    let len32 = |n: usize| u32::try_from(n).map_err(|_| PriorError::Format(format!("length {n} exceeds u32")));
    out.write_all(MAGIC)?;
    out.write_all(&len32(samples.len())?.to_le_bytes())?;
    for s in samples {
        out.write_all(&len32(s.history.len())?.to_le_bytes())?;
        out.write_all(&len32(s.target.len())?.to_le_bytes())?;
        for v in s.history.iter().chain(&s.target) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<SampleRecord>, PriorError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], PriorError> {
        let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or_else(|| PriorError::Format("truncated sample file".into()))?;
        let s = &buf[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(PriorError::Format("bad magic bytes, expected SPL1".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let h = u32_at(take(4)?);
        let t = u32_at(take(4)?);
        let mut read_f64s = |n: usize| -> Result<Vec<f64>, PriorError> {
            let bytes = take(n.checked_mul(8).ok_or_else(|| PriorError::Format("length overflow".into()))?)?;
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let history = read_f64s(h)?;
        let target = read_f64s(t)?;
        out.push(SampleRecord { history, target });
    }
    if pos != buf.len() {
        return Err(PriorError::Format("trailing bytes after last sample".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{sample_at, PriorConfig};
    use super::*;

    fn samples() -> Vec<SyntheticSample> {
        let cfg = PriorConfig::default();
        (0..3).map(|i| sample_at(&cfg, 21, i).unwrap()).collect()
    }

    #[test]
    fn csv_and_binary_round_trip_bitwise() {
        let s = samples();
        let want: Vec<SampleRecord> = s.iter().map(SampleRecord::from).collect();

        let mut csv_bytes = Vec::new();
        write_csv(&s, &mut csv_bytes).unwrap();
        assert!(csv_bytes.starts_with(b"sample_id,role,t,value\n"));
        assert_eq!(read_csv(csv_bytes.as_slice()).unwrap(), want);

        let mut bin = Vec::new();
        write_binary(&s, &mut bin).unwrap();
        assert_eq!(&bin[..4], b"SPL1");
        assert_eq!(read_binary(bin.as_slice()).unwrap(), want);
    }

    #[test]
    fn binary_rejects_corruption() {
        let mut bin = Vec::new();
        write_binary(&samples(), &mut bin).unwrap();
        let mut bad = bin.clone();
        bad[0] = b'X';
        assert!(matches!(read_binary(bad.as_slice()), Err(PriorError::Format(_))));
        assert!(matches!(read_binary(&bin[..bin.len() - 3]), Err(PriorError::Format(_))));
    }
}
