//! Named-tensor checkpoints in a safetensors container, with version,
//! profile and producing-config hash in the header metadata.

use std::fs;
use std::path::Path;

use gotjepa_autodiff::{ParamStore, Tensor};
use safetensors::tensor::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::profile::Profile;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub profile: Profile,
    /// Hash of the configuration that produced the checkpoint.
    pub config_hash: String,
    /// Command that wrote the checkpoint.
    pub stage: String,
}

/// Writes the safetensors layout directly: an 8-byte little-endian header
/// length, a JSON header with sorted keys padded to 8 bytes, then the data.
/// Sorted keys make the file bytes a function of the contents alone.
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let mut header = serde_json::Map::new();
    let mut info = serde_json::Map::new();
    info.insert("format_version".into(), CHECKPOINT_VERSION.to_string().into());
    info.insert(
        "profile".into(),
        serde_json::to_string(&meta.profile).expect("profile serializes").into(),
    );
    info.insert("config_hash".into(), meta.config_hash.clone().into());
    info.insert("stage".into(), meta.stage.clone().into());
    header.insert("__metadata__".into(), info.into());
    let mut data = Vec::new();
    for (k, t) in store.iter() {
        let begin = data.len();
        data.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        header.insert(
            k.clone(),
            serde_json::json!({
                "dtype": "F64",
                "shape": [t.rows(), t.cols()],
                "data_offsets": [begin, data.len()],
            }),
        );
    }
    let mut head = serde_json::to_vec(&serde_json::Value::Object(header)).expect("header serializes");
    head.resize(head.len().div_ceil(8) * 8, b' ');
    let mut buf = Vec::with_capacity(8 + head.len() + data.len());
    buf.extend((head.len() as u64).to_le_bytes());
    buf.extend(head);
    buf.extend(data);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |detail: String| Error::Parse {
        file: path.to_path_buf(),
        detail,
    };
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| parse(e.to_string()))?;
    let info = header
        .metadata()
        .clone()
        .ok_or_else(|| parse("missing header metadata".into()))?;
    let field = |k: &str| {
        info.get(k)
            .cloned()
            .ok_or_else(|| parse(format!("missing metadata field `{k}`")))
    };
    let version: u32 = field("format_version")?
        .parse()
        .map_err(|_| parse("field `format_version` is not an integer".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let profile: Profile = serde_json::from_str(&field("profile")?)
        .map_err(|e| parse(format!("field `profile`: {e}")))?;
    let meta = CheckpointMeta {
        profile,
        config_hash: field("config_hash")?,
        stage: field("stage")?,
    };
    let st = SafeTensors::deserialize(&buf).map_err(|e| parse(e.to_string()))?;
    let mut store = ParamStore::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 || view.shape().len() != 2 {
            return Err(parse(format!("tensor `{name}` is not a 2-D f64 tensor")));
        }
        let data = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::from_vec(view.shape()[0], view.shape()[1], data)?;
        store.insert(name, t);
    }
    Ok((store, meta))
}

/// Loads a checkpoint and checks it was produced for `profile`.
pub fn load_for_profile(path: &Path, profile: &Profile) -> Result<(ParamStore, CheckpointMeta)> {
    let (store, meta) = load_checkpoint(path)?;
    if meta.profile != *profile {
        return Err(Error::Init(format!(
            "checkpoint {} was trained for profile {:?}, not {:?}",
            path.display(),
            meta.profile,
            profile
        )));
    }
    Ok((store, meta))
}

/// SHA-256 over names, shapes and values of every parameter under `prefix`.
pub fn param_hash(store: &ParamStore, prefix: &str) -> String {
    let mut h = Sha256::new();
    for (k, t) in store.with_prefix(prefix) {
        h.update(k.as_bytes());
        h.update((t.rows() as u64).to_le_bytes());
        h.update((t.cols() as u64).to_le_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            profile: Profile::small(),
            config_hash: "abc".into(),
            stage: "train-stage0".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.insert("a/w", Tensor::from_fn(3, 2, |r, c| (r as f64 - 0.3) * (c as f64 + 1.7)));
        store.insert("b", Tensor::scalar(f64::MIN_POSITIVE));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        save_checkpoint(&path, &store, &meta()).unwrap();
        let (back, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        assert_eq!(param_hash(&back, ""), param_hash(&store, ""));
        assert_eq!(back.get("a/w"), store.get("a/w"));
        let again = dir.path().join("y.safetensors");
        save_checkpoint(&again, &back, &meta()).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn profile_mismatch_is_an_init_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        save_checkpoint(&path, &ParamStore::new(), &meta()).unwrap();
        assert!(matches!(
            load_for_profile(&path, &Profile::standard()),
            Err(Error::Init(_))
        ));
    }

    #[test]
    fn hash_depends_on_prefix_contents() {
        let mut store = ParamStore::new();
        store.insert("x/a", Tensor::scalar(1.0));
        store.insert("y/a", Tensor::scalar(1.0));
        let before = param_hash(&store, "x/");
        store.get_mut("y/a").unwrap().set(0, 0, 2.0);
        assert_eq!(param_hash(&store, "x/"), before);
        store.get_mut("x/a").unwrap().set(0, 0, 2.0);
        assert_ne!(param_hash(&store, "x/"), before);
    }
}
