use super::grid::EPOCH_STEPS;
use super::{Label, RawRecording};

/// Epoch window start after the stimulus, in seconds.
pub const EPOCH_START_S: f64 = 0.2;
/// Epoch window end after the stimulus (exclusive), in seconds.
pub const EPOCH_END_S: f64 = 0.6;

/// One stimulus-locked slice: `channels × 100` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEpoch {
    pub samples: Vec<Vec<f64>>,
    pub label: Label,
    pub marker: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Epochs {
    pub epochs: Vec<RawEpoch>,
    /// Markers whose window ran past the end of the record.
    pub skipped: usize,
}

/// Slices `[m + 0.2 s, m + 0.6 s)` after every marker. The recording must
/// already be at its final rate.
pub fn extract_epochs(rec: &RawRecording) -> Epochs {
    let offset = (EPOCH_START_S * rec.rate).round() as usize;
    let len = rec.samples.first().map_or(0, Vec::len);
    let mut out = Epochs::default();
    for &(m, label) in &rec.markers {
        let start = m + offset;
        let end = start + EPOCH_STEPS;
        if end > len {
            out.skipped += 1;
            continue;
        }
        out.epochs.push(RawEpoch {
            samples: rec.samples.iter().map(|row| row[start..end].to_vec()).collect(),
            label,
            marker: m,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_recording(len: usize, markers: Vec<(usize, Label)>) -> RawRecording {
        RawRecording {
            channels: vec!["Cz".into(), "Pz".into()],
            rate: 250.0,
            samples: vec![(0..len).map(|i| i as f64).collect(), vec![0.0; len]],
            markers,
            dataset_id: "t".into(),
        }
    }

    #[test]
    fn marker_at_zero_takes_samples_50_to_149() {
        let ep = extract_epochs(&ramp_recording(400, vec![(0, Label::Attended)]));
        assert_eq!(ep.epochs.len(), 1);
        let cz = &ep.epochs[0].samples[0];
        assert_eq!(cz.len(), 100);
        assert_eq!(cz[0], 50.0);
        assert_eq!(cz[99], 149.0);
        assert_eq!(ep.epochs[0].label, Label::Attended);
    }

    #[test]
    fn window_past_end_is_skipped_and_counted() {
        let ep = extract_epochs(&ramp_recording(
            400,
            vec![(10, Label::Unattended), (360, Label::Attended), (250, Label::Attended)],
        ));
        assert_eq!(ep.skipped, 1);
        assert_eq!(ep.epochs.len(), 2);
        assert_eq!(ep.epochs[1].marker, 250);
        assert_eq!(ep.epochs[1].samples[0][99], 399.0);
        assert!(ep.epochs.iter().all(|e| e.samples.iter().all(|c| c.len() == 100)));
    }
}
