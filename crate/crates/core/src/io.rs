//! On-disk formats: JSON checkpoints for backbones and composite models, and
//! datasets as a manifest plus one JSON-Lines file of records.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{AdapterParams, AdapterVariant, CompositeModel};
use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::nn::params::Parameters;
use crate::nn::rng::RngStream;
use crate::synthgen::{Dataset, DatasetSpec, TimeSeriesRecord};
use crate::tokenizer::TokenizerConfig;

pub const FORMAT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "covlab.checkpoint";
const DATASET_FORMAT: &str = "covlab.dataset";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SERIES_FILE: &str = "series.jsonl";

/// Config hash and seed stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex digits of the SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(sha256_hex(&bytes)[..16].to_string())
}

/// Digest of a backbone's config and parameters.
pub fn backbone_digest(params: &BackboneParams) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(params)?))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file so readers never see a torn file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn parse<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn check_header(path: &Path, format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(Error::Input(format!(
            "{}: expected a {expected} document, found {format}",
            path.display()
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Input(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    Ok(())
}

fn same_layout<P: Parameters>(a: &P, b: &P) -> bool {
    let mut la = Vec::new();
    let mut lb = Vec::new();
    a.visit(&mut |name, s| la.push((name.to_string(), s.len())));
    b.visit(&mut |name, s| lb.push((name.to_string(), s.len())));
    la == lb
}

fn check_backbone(path: &Path, params: &BackboneParams) -> Result<()> {
    params.config.validate()?;
    let fresh = BackboneParams::init(params.config, &mut RngStream::new(0, 0))?;
    if !same_layout(params, &fresh) {
        return Err(Error::Input(format!(
            "{}: parameter shapes disagree with the stored config",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BackboneDocument {
    format: String,
    version: u32,
    kind: String,
    provenance: Provenance,
    backbone: BackboneParams,
}

pub fn save_backbone(path: &Path, params: &BackboneParams, provenance: &Provenance) -> Result<()> {
    let doc = BackboneDocument {
        format: CHECKPOINT_FORMAT.into(),
        version: FORMAT_VERSION,
        kind: "backbone".into(),
        provenance: provenance.clone(),
        backbone: params.clone(),
    };
    write_file(path, &to_pretty(&doc)?)
}

pub fn load_backbone(path: &Path) -> Result<(BackboneParams, Provenance)> {
    let doc: BackboneDocument = parse(path, &read_file(path)?)?;
    check_header(path, &doc.format, CHECKPOINT_FORMAT, doc.version)?;
    if doc.kind != "backbone" {
        return Err(Error::Input(format!("{}: not a backbone checkpoint", path.display())));
    }
    check_backbone(path, &doc.backbone)?;
    Ok((doc.backbone, doc.provenance))
}

#[derive(Serialize, Deserialize)]
struct CompositeDocument {
    format: String,
    version: u32,
    kind: String,
    provenance: Provenance,
    variant: AdapterVariant,
    freeze_backbone: bool,
    tokenizer: TokenizerConfig,
    backbone_sha256: String,
    adapters: AdapterParams,
    /// Present only when the backbone was trained along with the adapters.
    backbone: Option<BackboneParams>,
}

/// Saves the adapters and, for unfrozen models, the backbone. A frozen
/// backbone is referenced by digest only.
pub fn save_composite(path: &Path, model: &CompositeModel, provenance: &Provenance) -> Result<()> {
    let doc = CompositeDocument {
        format: CHECKPOINT_FORMAT.into(),
        version: FORMAT_VERSION,
        kind: "composite".into(),
        provenance: provenance.clone(),
        variant: model.variant,
        freeze_backbone: model.freeze_backbone,
        tokenizer: model.tokenizer,
        backbone_sha256: backbone_digest(&model.backbone)?,
        adapters: model.adapters.clone(),
        backbone: (!model.freeze_backbone).then(|| model.backbone.clone()),
    };
    write_file(path, &to_pretty(&doc)?)
}

/// Loads a composite checkpoint. Frozen checkpoints need the backbone they
/// were trained on; its digest must match the stored one.
pub fn load_composite(path: &Path, backbone: Option<&BackboneParams>) -> Result<(CompositeModel, Provenance)> {
    let doc: CompositeDocument = parse(path, &read_file(path)?)?;
    check_header(path, &doc.format, CHECKPOINT_FORMAT, doc.version)?;
    if doc.kind != "composite" {
        return Err(Error::Input(format!("{}: not a composite checkpoint", path.display())));
    }
    let backbone = match (doc.backbone, backbone) {
        (Some(own), _) => own,
        (None, Some(given)) => given.clone(),
        (None, None) => {
            return Err(Error::Input(format!(
                "{}: frozen composite needs its backbone checkpoint",
                path.display()
            )))
        }
    };
    check_backbone(path, &backbone)?;
    let digest = backbone_digest(&backbone)?;
    if digest != doc.backbone_sha256 {
        return Err(Error::Checksum {
            path: path.display().to_string(),
            expected: doc.backbone_sha256,
            found: digest,
        });
    }
    let model = CompositeModel {
        backbone,
        adapters: doc.adapters,
        variant: doc.variant,
        freeze_backbone: doc.freeze_backbone,
        tokenizer: doc.tokenizer,
    };
    Ok((model, doc.provenance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub dataset_id: String,
    pub frequency: String,
    pub spec: DatasetSpec,
    pub n_series: usize,
    pub series_file: String,
    pub series_sha256: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStatus {
    Written,
    /// Identical files were already present and left untouched.
    Verified,
}

fn encode_records(records: &[TimeSeriesRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Writes `dir/manifest.json` and `dir/series.jsonl`. Existing output is
/// verified instead of rewritten; a corrupted or different dataset already
/// in `dir` is a checksum error.
pub fn write_dataset(dir: &Path, dataset: &Dataset, provenance: &Provenance) -> Result<WriteStatus> {
    let series = encode_records(&dataset.records)?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        dataset_id: dataset.id(),
        frequency: dataset.frequency().into(),
        spec: dataset.spec.clone(),
        n_series: dataset.records.len(),
        series_file: SERIES_FILE.into(),
        series_sha256: sha256_hex(&series),
        provenance: provenance.clone(),
    };
    let manifest_bytes = to_pretty(&manifest)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = verify_dataset(dir)?;
        if existing != manifest {
            return Err(Error::Checksum {
                path: manifest_path.display().to_string(),
                expected: manifest.series_sha256,
                found: existing.series_sha256,
            });
        }
        return Ok(WriteStatus::Verified);
    }
    write_file(&dir.join(SERIES_FILE), &series)?;
    write_file(&manifest_path, &manifest_bytes)?;
    Ok(WriteStatus::Written)
}

/// Reads the manifest and checks the series file against its digest.
pub fn verify_dataset(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = parse(&path, &read_file(&path)?)?;
    check_header(&path, &manifest.format, DATASET_FORMAT, manifest.version)?;
    let series_path = dir.join(&manifest.series_file);
    let found = sha256_hex(&read_file(&series_path)?);
    if found != manifest.series_sha256 {
        return Err(Error::Checksum {
            path: series_path.display().to_string(),
            expected: manifest.series_sha256,
            found,
        });
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = verify_dataset(dir)?;
    let series_path = dir.join(&manifest.series_file);
    let bytes = read_file(&series_path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Input(format!("{}: {e}", series_path.display())))?;
    let records: Vec<TimeSeriesRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse(&series_path, l.as_bytes()))
        .collect::<Result<_>>()?;
    if records.len() != manifest.n_series {
        return Err(Error::Input(format!(
            "{}: manifest lists {} series, file holds {}",
            series_path.display(),
            manifest.n_series,
            records.len()
        )));
    }
    let dataset = Dataset {
        spec: manifest.spec.clone(),
        records,
    };
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{attach, AdapterHyper};
    use crate::backbone::BackboneConfig;
    use crate::synthgen::{generate_dataset, CovariateKind, Operator, ScaleProfile, SignalKind};

    fn prov() -> Provenance {
        Provenance {
            config_hash: "abc".into(),
            seed: 4,
        }
    }

    fn backbone() -> BackboneParams {
        let cfg = BackboneConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            context_length: 16,
            vocab_size: 300,
            horizon: 4,
            ffn_dim: 16,
        };
        BackboneParams::init(cfg, &mut RngStream::new(1, 0)).unwrap()
    }

    fn dataset() -> Dataset {
        let spec = DatasetSpec {
            n_series: 2,
            length: 40,
            prediction_length: 4,
            ..DatasetSpec::new(SignalKind::Noisy, CovariateKind::Arp, Operator::Mult, ScaleProfile::Desk, 3)
        };
        let records = generate_dataset(&spec).unwrap();
        Dataset { spec, records }
    }

    #[test]
    fn backbone_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.json");
        let bb = backbone();
        save_backbone(&path, &bb, &prov()).unwrap();
        let (back, p) = load_backbone(&path).unwrap();
        assert_eq!(back, bb);
        assert_eq!(p, prov());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"rows\"") && text.contains("\"version\": 1"));
    }

    #[test]
    fn composite_checkpoints_reference_frozen_backbone() {
        let dir = tempfile::tempdir().unwrap();
        let bb = backbone();
        let hyper = AdapterHyper {
            hidden: 4,
            ..Default::default()
        };
        for (variant, frozen) in [(AdapterVariant::IibOib, true), (AdapterVariant::FfIibOib, false)] {
            let mut model = attach(bb.clone(), variant, &hyper, true, &mut RngStream::new(2, 0)).unwrap();
            model.adapters.visit_mut(&mut |_, s| s.iter_mut().for_each(|v| *v += 0.125));
            let path = dir.path().join(format!("{variant}.json"));
            save_composite(&path, &model, &prov()).unwrap();
            let text = fs::read_to_string(&path).unwrap();
            assert_eq!(text.contains("\"backbone\": null"), frozen);
            let (back, _) = load_composite(&path, Some(&bb)).unwrap();
            assert_eq!(back, model);
            if frozen {
                assert!(load_composite(&path, None).is_err());
                let mut other = bb.clone();
                other.w_out.data_mut()[0] += 1.0;
                assert!(matches!(load_composite(&path, Some(&other)), Err(Error::Checksum { .. })));
            } else {
                assert_eq!(load_composite(&path, None).unwrap().0, model);
            }
        }
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.json");
        save_backbone(&path, &backbone(), &prov()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let bad_version = text.replace("\"version\": 1", "\"version\": 9");
        fs::write(&path, bad_version).unwrap();
        assert!(matches!(load_backbone(&path), Err(Error::Input(_))));
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["backbone"]["config"]["d_model"] = 16.into();
        fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
        assert!(load_backbone(&path).is_err());
        assert!(matches!(load_backbone(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn dataset_round_trip_preserves_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset();
        assert_eq!(write_dataset(dir.path(), &ds, &prov()).unwrap(), WriteStatus::Written);
        let (back, manifest) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(manifest.dataset_id, ds.id());
        assert_eq!(manifest.provenance, prov());
        for (a, b) in back.records.iter().zip(&ds.records) {
            for (x, y) in a.target.iter().zip(&b.target) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rerun_verifies_without_rewriting() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset();
        write_dataset(dir.path(), &ds, &prov()).unwrap();
        let series = dir.path().join(SERIES_FILE);
        let before = fs::metadata(&series).unwrap().modified().unwrap();
        let bytes = fs::read(&series).unwrap();
        assert_eq!(write_dataset(dir.path(), &ds, &prov()).unwrap(), WriteStatus::Verified);
        assert_eq!(fs::metadata(&series).unwrap().modified().unwrap(), before);
        assert_eq!(fs::read(&series).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_a_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset();
        write_dataset(dir.path(), &ds, &prov()).unwrap();
        let series = dir.path().join(SERIES_FILE);
        let mut bytes = fs::read(&series).unwrap();
        let pos = bytes.iter().position(|b| b.is_ascii_digit()).unwrap();
        bytes[pos] = if bytes[pos] == b'9' { b'8' } else { bytes[pos] + 1 };
        fs::write(&series, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Checksum { .. })));
        assert!(matches!(write_dataset(dir.path(), &ds, &prov()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn different_dataset_in_place_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &dataset(), &prov()).unwrap();
        let other = Provenance {
            config_hash: "def".into(),
            seed: 4,
        };
        assert!(write_dataset(dir.path(), &dataset(), &other).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&TokenizerConfig::default()).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&TokenizerConfig::default()).unwrap());
        let other = TokenizerConfig {
            num_bins: 7,
            ..Default::default()
        };
        assert_ne!(a, config_hash(&other).unwrap());
    }
}
