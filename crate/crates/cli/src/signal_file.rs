//! Signal files: CSV (`t_seconds,mV`) or the binary recording format,
//! chosen by extension.

use anyhow::{bail, Context, Result};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use wban_core::wire::WireFrame;
use wban_core::SampleFrame;
use wban_monitor::config::SignalKind;
use wban_monitor::recording::{Recording, RecordingHeader, RecordingWriter, RECORDING_EXT};

pub const FRAME_LEN: usize = 50;

#[derive(Debug, Clone)]
pub struct Signal {
    pub channel_id: u8,
    /// Known only for recordings.
    pub kind: Option<SignalKind>,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn frame(&self) -> Result<SampleFrame> {
        Ok(SampleFrame::new(
            self.channel_id,
            0,
            self.sample_rate,
            0.0,
            self.samples.clone(),
        )?)
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Consecutive frames of `FRAME_LEN` samples.
    pub fn frames(&self) -> Result<Vec<SampleFrame>> {
        Ok(self.frame()?.chunks(FRAME_LEN).collect())
    }
}

pub fn is_recording(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == RECORDING_EXT)
}

pub fn load(path: &Path) -> Result<Signal> {
    if is_recording(path) {
        let rec = Recording::open(path).with_context(|| format!("reading {}", path.display()))?;
        let samples: Vec<f64> = rec
            .sample_frames()
            .into_iter()
            .flat_map(|f| f.samples)
            .collect();
        if samples.is_empty() {
            bail!("{}: recording holds no samples", path.display());
        }
        return Ok(Signal {
            channel_id: rec.header.channel_id,
            kind: Some(rec.header.kind),
            sample_rate: rec.header.sample_rate as f64,
            samples,
        });
    }
    load_csv(path)
}

fn load_csv(path: &Path) -> Result<Signal> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut t = Vec::new();
    let mut samples = Vec::new();
    for (i, row) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (ti, v) = row.with_context(|| format!("{}: bad row {}", path.display(), i + 2))?;
        t.push(ti);
        samples.push(v);
    }
    if samples.len() < 2 {
        bail!(
            "{}: need at least two samples, found {}",
            path.display(),
            samples.len()
        );
    }
    let span = t[t.len() - 1] - t[0];
    if span.is_nan() || span <= 0.0 {
        bail!("{}: timestamps must increase", path.display());
    }
    let fs = ((samples.len() - 1) as f64 / span * 1000.0).round() / 1000.0;
    Ok(Signal {
        channel_id: 1,
        kind: None,
        sample_rate: fs,
        samples,
    })
}

pub fn save(path: &Path, signal: &Signal, kind: SignalKind) -> Result<()> {
    if is_recording(path) {
        let fs = signal.sample_rate;
        if fs.fract() != 0.0 || !(1.0..=u16::MAX as f64).contains(&fs) {
            bail!("recordings need an integral sample rate, got {fs}");
        }
        let start_time = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let header = RecordingHeader {
            channel_id: signal.channel_id,
            kind,
            sample_rate: fs as u16,
            start_time,
        };
        let mut w = RecordingWriter::create_at(path, header)?;
        for f in signal.frames()? {
            w.append(&WireFrame::from_sample_frame(&f)?)?;
        }
        return Ok(());
    }
    let mut wtr =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record(["t_seconds", "mV"])?;
    for (i, v) in signal.samples.iter().enumerate() {
        wtr.write_record([(i as f64 / signal.sample_rate).to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal() -> Signal {
        Signal {
            channel_id: 4,
            kind: None,
            sample_rate: 250.0,
            samples: (0..120).map(|i| (i as f64 * 0.37).sin()).collect(),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        save(&p, &signal(), SignalKind::Ecg).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.samples, signal().samples);
        assert_eq!(back.sample_rate, 250.0);
    }

    #[test]
    fn recording_round_trip_quantises() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.banrec");
        save(&p, &signal(), SignalKind::Eeg).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.kind, Some(SignalKind::Eeg));
        assert_eq!(back.channel_id, 4);
        assert_eq!(back.samples.len(), 120);
        for (a, b) in back.samples.iter().zip(&signal().samples) {
            assert!((a - b).abs() <= 0.0005);
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "").unwrap();
        assert!(load(&p).is_err());
        std::fs::write(&p, "t_seconds,mV\n").unwrap();
        assert!(load(&p).is_err());
        let r = dir.path().join("e.banrec");
        std::fs::write(&r, "").unwrap();
        assert!(load(&r).is_err());
    }
}
