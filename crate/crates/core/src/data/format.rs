//! Single-file little-endian container; the byte layout is documented in
//! `docs/formats.md`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Subject};
use crate::binio::{read_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::preprocess::Recording;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 8] = *b"TSCEEG\0\x01";
pub const DATASET_VERSION: u32 = 1;

fn count(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("too many {what}")))
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    ds.validate()?;
    let mut w = Writer::new(out);
    w.bytes(&DATASET_MAGIC)?;
    w.u32(DATASET_VERSION)?;
    w.u32(count(ds.subjects.len(), "subjects")?)?;
    for s in &ds.subjects {
        w.u32(s.id)?;
        w.u32(count(s.trials.len(), "trials")?)?;
        for t in &s.trials {
            w.u32(t.trial_id)?;
            w.f64(t.fs)?;
            w.u32(count(t.num_channels(), "channels")?)?;
            w.u64(t.num_samples() as u64)?;
            for name in &t.channel_names {
                w.str(name)?;
            }
            w.u32(count(t.ratings.len(), "ratings")?)?;
            for (dim, v) in &t.ratings {
                w.str(dim)?;
                w.f64(*v)?;
            }
            w.f64s(t.data.data())?;
        }
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(input: R) -> Result<Dataset> {
    let mut r = Reader::new(input);
    read_header(&mut r, &DATASET_MAGIC, DATASET_VERSION)?;
    let n_subjects = r.u32("subject count")?;
    let mut subjects = Vec::new();
    for _ in 0..n_subjects {
        let id = r.u32("subject id")?;
        let n_trials = r.u32("trial count")?;
        let mut trials = Vec::new();
        for _ in 0..n_trials {
            let trial_id = r.u32("trial id")?;
            let fs = r.f64("sampling rate")?;
            let c = r.u32("channel count")? as usize;
            let n = usize::try_from(r.u64("sample count")?).map_err(|_| Error::Format("sample count overflow".into()))?;
            let names = (0..c).map(|_| r.str("channel name")).collect::<Result<Vec<_>>>()?;
            let n_ratings = r.u32("rating count")?;
            let mut ratings = BTreeMap::new();
            for _ in 0..n_ratings {
                let dim = r.str("rating dimension")?;
                ratings.insert(dim, r.f64("rating value")?);
            }
            let len = c.checked_mul(n).ok_or_else(|| Error::Format("payload size overflow".into()))?;
            let data = Tensor::from_vec(&[c, n], r.f64s(len, "trial payload")?)?;
            trials.push(Recording::new(data, fs, names, id, trial_id, ratings).map_err(|e| Error::Format(e.to_string()))?);
        }
        subjects.push(Subject { id, trials });
    }
    r.expect_end()?;
    let ds = Dataset { subjects };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset_to(ds, BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}
