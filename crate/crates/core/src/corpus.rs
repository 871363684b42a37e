//! Audio clips, recording sessions and the session manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default glucose threshold separating the two classes, in mg/dL.
pub const GLUCOSE_THRESHOLD_MG_DL: f64 = 100.0;

/// Lowest sample rate the extractors accept.
pub const MIN_SAMPLE_RATE: u32 = 8000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::Validation(format!(
                "sample rate {sample_rate} Hz below the {MIN_SAMPLE_RATE} Hz minimum"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at index {i}")));
        }
        if let Some(i) = samples.iter().position(|s| s.abs() > 1.0) {
            return Err(Error::Validation(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Copy with every sample multiplied by `gain`, clamped to `[-1, 1]`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| (s * gain).clamp(-1.0, 1.0))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// The four recording tasks of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Sentences,
    VowelA,
    VowelI,
    Conversation,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 4] = [
        SegmentKind::Sentences,
        SegmentKind::VowelA,
        SegmentKind::VowelI,
        SegmentKind::Conversation,
    ];

    pub const VOWELS: [SegmentKind; 2] = [SegmentKind::VowelA, SegmentKind::VowelI];

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::Sentences => "sentences",
            SegmentKind::VowelA => "vowel_a",
            SegmentKind::VowelI => "vowel_i",
            SegmentKind::Conversation => "conversation",
        }
    }

    pub fn is_vowel(self) -> bool {
        matches!(self, SegmentKind::VowelA | SegmentKind::VowelI)
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentences" => Ok(SegmentKind::Sentences),
            "vowel_a" => Ok(SegmentKind::VowelA),
            "vowel_i" => Ok(SegmentKind::VowelI),
            "conversation" => Ok(SegmentKind::Conversation),
            other => Err(Error::Validation(format!("unknown segment kind {other:?}"))),
        }
    }
}

/// One participant visit: the recorded segments plus the measured glucose.
#[derive(Debug, Clone)]
pub struct RecordingSession {
    pub session_id: String,
    pub participant_id: String,
    pub segments: BTreeMap<SegmentKind, AudioClip>,
    pub glucose_mg_dl: f64,
    pub label: u8,
}

impl RecordingSession {
    /// Builds a session, deriving the label with the default threshold.
    pub fn new(
        session_id: impl Into<String>,
        participant_id: impl Into<String>,
        segments: BTreeMap<SegmentKind, AudioClip>,
        glucose_mg_dl: f64,
    ) -> Result<Self> {
        Self::with_threshold(
            session_id,
            participant_id,
            segments,
            glucose_mg_dl,
            GLUCOSE_THRESHOLD_MG_DL,
        )
    }

    pub fn with_threshold(
        session_id: impl Into<String>,
        participant_id: impl Into<String>,
        segments: BTreeMap<SegmentKind, AudioClip>,
        glucose_mg_dl: f64,
        threshold_mg_dl: f64,
    ) -> Result<Self> {
        let session_id = session_id.into();
        for vowel in SegmentKind::VOWELS {
            if !segments.contains_key(&vowel) {
                return Err(Error::Validation(format!(
                    "session {session_id}: missing required segment {vowel}"
                )));
            }
        }
        let label = label_glucose_with(glucose_mg_dl, threshold_mg_dl)?;
        Ok(Self {
            session_id,
            participant_id: participant_id.into(),
            segments,
            glucose_mg_dl,
            label,
        })
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&AudioClip> {
        self.segments.get(&kind)
    }
}

/// 1 when glucose exceeds 100 mg/dL, else 0. Exactly 100 is low.
pub fn label_glucose(glucose_mg_dl: f64) -> Result<u8> {
    label_glucose_with(glucose_mg_dl, GLUCOSE_THRESHOLD_MG_DL)
}

pub fn label_glucose_with(glucose_mg_dl: f64, threshold_mg_dl: f64) -> Result<u8> {
    if !(glucose_mg_dl > 0.0) || !glucose_mg_dl.is_finite() {
        return Err(Error::Domain(format!(
            "glucose must be positive, got {glucose_mg_dl}"
        )));
    }
    Ok(u8::from(glucose_mg_dl > threshold_mg_dl))
}

/// Decodes a PCM WAV (16-bit integer or 32-bit float), averaging channels to mono.
pub fn decode_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav_reader(std::io::BufReader::new(file))
        .map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Decodes WAV bytes from any reader.
pub fn decode_wav_reader<R: std::io::Read>(reader: R) -> Result<AudioClip> {
    let mut wav = hound::WavReader::new(reader).map_err(wav_error)?;
    let spec = wav.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => wav
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (hound::SampleFormat::Float, 32) => wav
            .samples::<f32>()
            .map(|s| s.map(|v| f64::from(v).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (format, bits) => {
            return Err(Error::Format(format!(
                "unsupported bit depth: {bits}-bit {}",
                match format {
                    hound::SampleFormat::Int => "integer",
                    hound::SampleFormat::Float => "float",
                }
            )))
        }
    };
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioClip::new(mono, spec.sample_rate)
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Format(format!("read failed: {io}")),
        hound::Error::FormatError(msg) => Error::Format(format!("not a valid WAV file: {msg}")),
        hound::Error::Unsupported => Error::Format("unsupported WAV encoding".into()),
        other => Error::Format(other.to_string()),
    }
}

/// Writes a clip as mono 16-bit PCM.
pub fn encode_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in clip.samples() {
        writer.write_sample(quantize_i16(s)).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    session_id: String,
    participant_id: String,
    segment: String,
    wav_path: String,
    glucose_mg_dl: String,
}

pub const MANIFEST_HEADER: [&str; 5] = [
    "session_id",
    "participant_id",
    "segment",
    "wav_path",
    "glucose_mg_dl",
];

/// Loads every session named in a manifest, with the default threshold.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<RecordingSession>> {
    load_manifest_with(path, GLUCOSE_THRESHOLD_MG_DL, 1)
}

/// Loads a manifest, labelling with `threshold_mg_dl` and decoding WAVs on
/// up to `jobs` threads. Relative WAV paths resolve against the manifest's
/// directory. Sessions come back sorted by id.
pub fn load_manifest_with(
    path: impl AsRef<Path>,
    threshold_mg_dl: f64,
    jobs: usize,
) -> Result<Vec<RecordingSession>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Validation(format!(
            "manifest header must be `{}`, got `{}`",
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }

    struct Pending {
        participant_id: String,
        glucose: f64,
        segments: BTreeMap<SegmentKind, PathBuf>,
    }
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();

    for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
        // Row 1 is the header.
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let glucose: f64 = record.glucose_mg_dl.parse().map_err(|_| Error::Parse {
            row,
            message: format!("glucose_mg_dl {:?} is not a number", record.glucose_mg_dl),
        })?;
        let kind: SegmentKind = record.segment.parse().map_err(|_| Error::Parse {
            row,
            message: format!("unknown segment {:?}", record.segment),
        })?;
        let wav = {
            let p = PathBuf::from(&record.wav_path);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let entry = pending
            .entry(record.session_id.clone())
            .or_insert_with(|| Pending {
                participant_id: record.participant_id.clone(),
                glucose,
                segments: BTreeMap::new(),
            });
        if entry.glucose != glucose {
            return Err(Error::Validation(format!(
                "session {}: glucose {} at row {row} differs from earlier value {}",
                record.session_id, glucose, entry.glucose
            )));
        }
        if entry.participant_id != record.participant_id {
            return Err(Error::Validation(format!(
                "session {}: participant id changes at row {row}",
                record.session_id
            )));
        }
        if entry.segments.insert(kind, wav).is_some() {
            return Err(Error::Validation(format!(
                "session {}: duplicate {kind} segment at row {row}",
                record.session_id
            )));
        }
    }

    for (id, p) in &pending {
        for vowel in SegmentKind::VOWELS {
            if !p.segments.contains_key(&vowel) {
                return Err(Error::Validation(format!(
                    "session {id}: missing required segment {vowel}"
                )));
            }
        }
        for kind in [SegmentKind::Sentences, SegmentKind::Conversation] {
            if !p.segments.contains_key(&kind) {
                warn!("session {id}: no {kind} segment");
            }
        }
    }

    let jobs_list: Vec<(String, SegmentKind, PathBuf)> = pending
        .iter()
        .flat_map(|(id, p)| {
            p.segments
                .iter()
                .map(move |(k, path)| (id.clone(), *k, path.clone()))
        })
        .collect();
    let decoded = crate::par_map(&jobs_list, jobs, |(_, _, path)| {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "audio file not found"),
            ));
        }
        decode_wav(path)
    });
    let mut clips: HashMap<(String, SegmentKind), AudioClip> = HashMap::new();
    for ((id, kind, _), clip) in jobs_list.into_iter().zip(decoded) {
        clips.insert((id, kind), clip?);
    }

    pending
        .into_iter()
        .map(|(id, p)| {
            let segments = p
                .segments
                .keys()
                .map(|k| (*k, clips.remove(&(id.clone(), *k)).expect("decoded above")))
                .collect();
            RecordingSession::with_threshold(id, p.participant_id, segments, p.glucose, threshold_mg_dl)
        })
        .collect()
}

/// Writes a manifest for `rows` of `(session_id, participant_id, segment, wav_path, glucose)`.
pub fn write_manifest<'a, I>(path: impl AsRef<Path>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a str, SegmentKind, &'a str, f64)>,
{
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MANIFEST_HEADER)?;
    for (sid, pid, seg, wav, glucose) in rows {
        w.write_record([sid, pid, seg.as_str(), wav, &glucose.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_i16_wav(path: &Path, channels: u16, rate: u32, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn labels_follow_threshold() {
        assert_eq!(label_glucose(169.0).unwrap(), 1);
        assert_eq!(label_glucose(81.3).unwrap(), 0);
        assert_eq!(label_glucose(100.0).unwrap(), 0);
        assert_eq!(label_glucose(230.0).unwrap(), 1);
        assert_eq!(label_glucose(65.0).unwrap(), 0);
        assert!(matches!(label_glucose(0.0), Err(Error::Domain(_))));
        assert!(matches!(label_glucose(-3.0), Err(Error::Domain(_))));
        assert!(label_glucose(f64::NAN).is_err());
    }

    #[test]
    fn decodes_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_i16_wav(&p, 1, 16000, &vec![vec![0]; 16000]);
        let clip = decode_wav(&p).unwrap();
        assert_eq!(clip.len(), 16000);
        assert_eq!(clip.duration(), 1.0);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scales_full_scale_sample() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_i16_wav(&p, 1, 8000, &[vec![32767], vec![-32768]]);
        let clip = decode_wav(&p).unwrap();
        assert_eq!(clip.samples()[0], 32767.0 / 32768.0);
        assert_eq!(clip.samples()[1], -1.0);
    }

    #[test]
    fn averages_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_i16_wav(&p, 2, 8000, &vec![vec![16384, -16384]; 10]);
        let clip = decode_wav(&p).unwrap();
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn float_wav_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.write_sample(-0.5f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(decode_wav(&p).unwrap().samples(), &[0.25, -0.5]);
    }

    #[test]
    fn rejects_non_wav_and_bad_depth() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        std::fs::write(&p, b"not a riff file at all, just text").unwrap();
        assert!(matches!(decode_wav(&p), Err(Error::Format(_))));

        let p8 = dir.path().join("b8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p8, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        match decode_wav(&p8) {
            Err(Error::Format(msg)) => assert!(msg.contains("8-bit"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }

        let missing = dir.path().join("nope.wav");
        match decode_wav(&missing) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn clip_validation() {
        assert!(AudioClip::new(vec![0.0], 4000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 8000).is_err());
        assert!(AudioClip::new(vec![1.5], 8000).is_err());
        assert!(AudioClip::new(vec![1.0, -1.0], 8000).is_ok());
    }

    fn manifest_fixture(dir: &Path, body: &str) -> PathBuf {
        let tone: Vec<Vec<i16>> = (0..800).map(|i| vec![((i % 50) * 100) as i16]).collect();
        for name in ["a.wav", "i.wav", "c.wav"] {
            write_i16_wav(&dir.join(name), 1, 8000, &tone);
        }
        let p = dir.join("manifest.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_sessions_sorted_and_labelled() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_fixture(
            dir.path(),
            "session_id,participant_id,segment,wav_path,glucose_mg_dl\n\
             s2,p1,vowel_a,a.wav,169\n\
             s2,p1,vowel_i,i.wav,169\n\
             s1,p1,vowel_a,a.wav,81.3\n\
             s1,p1,vowel_i,i.wav,81.3\n\
             s1,p1,conversation,c.wav,81.3\n\
             s3,p2,vowel_a,a.wav,100\n\
             s3,p2,vowel_i,i.wav,100\n",
        );
        let sessions = load_manifest(&p).unwrap();
        let ids: Vec<_> = sessions.iter().map(|s| s.session_id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2", "s3"]);
        assert_eq!(sessions[0].label, 0);
        assert_eq!(sessions[1].label, 1);
        assert_eq!(sessions[2].label, 0);
        assert_eq!(sessions[0].segments.len(), 3);
        for s in &sessions {
            assert_eq!(s.label, label_glucose(s.glucose_mg_dl).unwrap());
        }
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let header = "session_id,participant_id,segment,wav_path,glucose_mg_dl\n";

        let p = manifest_fixture(dir.path(), &format!("{header}s1,p1,vowel_a,a.wav,90\n"));
        match load_manifest(&p) {
            Err(Error::Validation(msg)) => assert!(msg.contains("s1"), "{msg}"),
            other => panic!("{other:?}"),
        }

        let p = manifest_fixture(
            dir.path(),
            &format!("{header}s1,p1,vowel_a,a.wav,90\ns1,p1,vowel_i,i.wav,abc\n"),
        );
        match load_manifest(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }

        let p = manifest_fixture(
            dir.path(),
            &format!("{header}s1,p1,vowel_a,a.wav,90\ns1,p1,vowel_i,i.wav,95\n"),
        );
        assert!(matches!(load_manifest(&p), Err(Error::Validation(_))));

        let p = manifest_fixture(
            dir.path(),
            &format!("{header}s1,p1,vowel_a,a.wav,90\ns1,p1,vowel_i,missing.wav,90\n"),
        );
        match load_manifest(&p) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("missing.wav")),
            other => panic!("{other:?}"),
        }

        match load_manifest(dir.path().join("absent.csv")) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("absent.csv")),
            other => panic!("{other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn wav_round_trip_within_one_lsb(samples in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.wav");
            let clip = AudioClip::new(samples, 16000).unwrap();
            encode_wav(&clip, &p).unwrap();
            let back = decode_wav(&p).unwrap();
            proptest::prop_assert_eq!(back.len(), clip.len());
            for (a, b) in clip.samples().iter().zip(back.samples()) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
