//! Weight files: a JSON manifest next to one MVDT file per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ToyUNet, ToyUNetSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NET_MANIFEST: &str = "net.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetManifest {
    spec: ToyUNetSpec,
    /// Temporal slots that were pruned.
    pruned: Vec<usize>,
    /// Tensor name to file name, relative to the manifest.
    tensors: BTreeMap<String, String>,
}

/// Writes `net.json` and the tensor files into `dir`.
pub fn save_net(net: &ToyUNet, dir: &Path) -> Result<()> {
    if net.has_funnels() {
        return Err(Error::Contract("merge funnels before saving weights".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = BTreeMap::new();
    let mut result = Ok(());
    net.visit_tensors(&mut |name, t| {
        if result.is_err() {
            return;
        }
        let file = format!("{name}.mvdt");
        result = t.save(dir.join(&file));
        tensors.insert(name, file);
    });
    result?;
    let pruned = net
        .temporal_slots()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.is_none().then_some(i))
        .collect();
    let manifest = NetManifest {
        spec: net.spec.clone(),
        pruned,
        tensors,
    };
    let path = dir.join(NET_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a network written by [`save_net`]. Tensor shapes may differ from a
/// freshly built network (merged funnels narrow layers); every layer is
/// re-validated after loading.
pub fn load_net(dir: &Path) -> Result<ToyUNet> {
    let path = dir.join(NET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: NetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let mut net = ToyUNet::build(&manifest.spec)?;
    {
        let mut slots = net.temporal_slots_mut();
        for &i in &manifest.pruned {
            let slot = slots
                .get_mut(i)
                .ok_or_else(|| Error::Format(format!("pruned slot {i} out of range")))?;
            **slot = None;
        }
    }
    let mut seen = 0;
    net.visit_tensors_mut(&mut |name, t| {
        let file = manifest
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Format(format!("manifest lacks tensor {name}")))?;
        *t = Tensor::load(dir.join(file))?;
        seen += 1;
        Ok(())
    })?;
    if seen != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors but the network has {seen}",
            manifest.tensors.len()
        )));
    }
    for b in net.blocks_mut() {
        b.revalidate()?;
    }
    Ok(net)
}
