//! On-disk weight and funnel bundles.
//!
//! A weights manifest is a JSON object whose `tensors` field maps tensor
//! names to MVDT files relative to the manifest; any other fields are carried
//! through unchanged, so a saved toy UNet (`net.json`) is also a weights
//! manifest. A funnel manifest lists target layer pairs by tensor name with
//! the files holding their `F1`/`F2` factors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::funnel::{
    csi_attention_qk, csi_conv_pair, csi_linear_pair, csi_value_output, merge_attention, merge_conv, merge_linear,
    AttentionProjections, ConvPair, FunnelKind, FunnelPair, LinearPair,
};
use crate::linalg::{svd, svd_of_product};
use crate::nn::Nonlinearity;
use crate::tensor::{update_digest, Tensor};

pub const FUNNEL_MANIFEST: &str = "funnels.json";
/// Input rows per random trial of the merge equivalence check.
pub const CHECK_ROWS: usize = 8;
/// Spatial extent of random images in conv equivalence checks.
pub const CHECK_IMAGE: usize = 6;

// ---- weights ---------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    pub tensors: BTreeMap<String, Tensor>,
    /// Manifest fields other than `tensors`.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl WeightStore {
    pub fn new(tensors: BTreeMap<String, Tensor>) -> Self {
        WeightStore {
            tensors,
            extra: serde_json::Map::new(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("weights have no tensor named {name}")))
    }

    /// SHA-256 over names and tensors in name order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            update_digest(&mut h, t);
        }
        hex::encode(h.finalize())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

pub fn load_weights(manifest: &Path) -> Result<WeightStore> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut extra: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::json(manifest, e))?;
    let files: BTreeMap<String, String> = match extra.remove("tensors") {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::json(manifest, e))?,
        None => return Err(Error::Format(format!("{} has no tensors field", manifest.display()))),
    };
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut tensors = BTreeMap::new();
    for (name, file) in files {
        tensors.insert(name, Tensor::load(root.join(file))?);
    }
    Ok(WeightStore { tensors, extra })
}

/// Writes `<name>.mvdt` files and the manifest `file_name` into `dir`.
pub fn save_weights(store: &WeightStore, dir: &Path, file_name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut doc = store.extra.clone();
    let mut files = serde_json::Map::new();
    for (name, t) in &store.tensors {
        let file = format!("{name}.mvdt");
        t.save(dir.join(&file))?;
        files.insert(name.clone(), file.into());
    }
    doc.insert("tensors".into(), files.into());
    let path = dir.join(file_name);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

// ---- targets ---------------------------------------------------------------------

/// A layer pair named by its two tensors.
///
/// `first`/`second` are `W1`/`W2` (column convention) for linear pairs,
/// `K1`/`K2` for conv pairs, `Wq`/`Wk` for query/key and `Wv`/`Wo` for
/// value/output (row convention).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTarget {
    pub kind: FunnelKind,
    pub first: String,
    pub second: String,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
}

impl PairTarget {
    pub fn new(kind: FunnelKind, first: &str, second: &str) -> Self {
        PairTarget {
            kind,
            first: first.into(),
            second: second.into(),
            nonlinearity: Nonlinearity::Identity,
        }
    }

    /// Parses `kind:first:second`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let [kind, first, second] = parts[..] else {
            return Err(Error::arg(format!("pair {text:?} is not kind:first:second")));
        };
        let kind: FunnelKind =
            serde_json::from_value(kind.into()).map_err(|_| Error::arg(format!("unknown funnel kind {kind:?}")))?;
        Ok(PairTarget::new(kind, first, second))
    }
}

/// Suffixes that identify pairs in layer-name conventions like the toy UNet's.
const PAIR_SUFFIXES: [(FunnelKind, &str, &str); 4] = [
    (FunnelKind::AttentionQk, "wq", "wk"),
    (FunnelKind::AttentionVo, "wv", "wo"),
    (FunnelKind::Conv, "k1", "k2"),
    (FunnelKind::Linear, "w1", "w2"),
];

/// Finds `<prefix>.wq`/`<prefix>.wk` style pairs of the requested kinds.
/// Cross-attention projections (`.cross.` names) are skipped.
pub fn discover_pairs(store: &WeightStore, kinds: &[FunnelKind]) -> Vec<PairTarget> {
    let mut out = Vec::new();
    for (kind, a, b) in PAIR_SUFFIXES {
        if !kinds.contains(&kind) {
            continue;
        }
        for name in store.tensors.keys() {
            let Some(prefix) = name.strip_suffix(&format!(".{a}")) else {
                continue;
            };
            if prefix.split('.').any(|p| p == "cross") {
                continue;
            }
            let partner = format!("{prefix}.{b}");
            if store.tensors.contains_key(&partner) {
                out.push(PairTarget::new(kind, name, &partner));
            }
        }
    }
    out.sort_by(|a, b| a.first.cmp(&b.first));
    out
}

enum Resolved {
    Linear(LinearPair),
    Conv(ConvPair),
    Attention(AttentionProjections),
}

fn resolve(store: &WeightStore, t: &PairTarget) -> Result<Resolved> {
    let a = store.get(&t.first)?.clone();
    let b = store.get(&t.second)?.clone();
    let wrap = |e: Error| Error::Contract(format!("{} / {}: {e}", t.first, t.second));
    Ok(match t.kind {
        FunnelKind::Linear => Resolved::Linear(LinearPair::new(a, b, t.nonlinearity).map_err(wrap)?),
        FunnelKind::Conv => Resolved::Conv(ConvPair::new(a, b, t.nonlinearity).map_err(wrap)?),
        FunnelKind::AttentionQk => {
            let (c_in, d) = a.ensure_matrix("Wq").map_err(wrap)?;
            if b.shape() != [c_in, d] {
                return Err(wrap(Error::shape(format!("Wk {:?} vs Wq {:?}", b.shape(), a.shape()))));
            }
            // value/output slots are placeholders; only Wq and Wk are read
            let dummy_v = Tensor::zeros(&[c_in, 1]);
            let dummy_o = Tensor::zeros(&[1, 1]);
            Resolved::Attention(AttentionProjections::new(a, b, dummy_v, dummy_o).map_err(wrap)?)
        }
        FunnelKind::AttentionVo => {
            let (c_in, _) = a.ensure_matrix("Wv").map_err(wrap)?;
            let q = Tensor::zeros(&[c_in, 1]);
            Resolved::Attention(AttentionProjections::new(q.clone(), q, a, b).map_err(wrap)?)
        }
    })
}

/// Product the funnel approximates and the same product through the funnel,
/// both as matrices.
fn product_and_effective(r: &Resolved, kind: FunnelKind, f: &FunnelPair) -> Result<(Tensor, Tensor)> {
    match r {
        Resolved::Linear(p) => Ok((p.product()?, p.effective(f)?)),
        Resolved::Conv(p) => {
            let a = p.input_patch_matrix();
            let b = p.output_collection_matrix();
            Ok((b.matmul(&a)?, b.matmul(&f.f2)?.matmul(&f.f1)?.matmul(&a)?))
        }
        Resolved::Attention(p) if kind == FunnelKind::AttentionQk => Ok((
            p.similarity()?,
            p.wq.matmul(f.fq())?
                .matmul(&f.fk().transpose())?
                .matmul(&p.wk.transpose())?,
        )),
        Resolved::Attention(p) => {
            let pair = p.value_output_pair()?;
            Ok((pair.product()?, pair.effective(f)?))
        }
    }
}

fn product_factors(r: &Resolved, kind: FunnelKind) -> Result<(Tensor, Tensor)> {
    match r {
        Resolved::Linear(p) => Ok((p.w2.clone(), p.w1.clone())),
        Resolved::Conv(p) => Ok((p.output_collection_matrix(), p.input_patch_matrix())),
        Resolved::Attention(p) if kind == FunnelKind::AttentionQk => Ok((p.wq.clone(), p.wk.transpose())),
        Resolved::Attention(p) => {
            let pair = p.value_output_pair()?;
            Ok((pair.w2, pair.w1))
        }
    }
}

/// Residual of a funnel against the best rank-`c'` approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiCheck {
    pub width: usize,
    pub inner: usize,
    /// `‖effective − product‖_F`.
    pub residual: f64,
    /// `sqrt(Σ_{i>c'} S_i²)` of the product.
    pub oracle_residual: f64,
    /// `|residual − oracle| / max(‖product‖_F, tiny)`.
    pub relative_gap: f64,
}

pub fn csi_for_target(store: &WeightStore, target: &PairTarget, fun_factor: f64) -> Result<(FunnelPair, CsiCheck)> {
    let r = resolve(store, target)?;
    let funnel = match (&r, target.kind) {
        (Resolved::Linear(p), _) => csi_linear_pair(p, fun_factor)?,
        (Resolved::Conv(p), _) => csi_conv_pair(p, fun_factor)?,
        (Resolved::Attention(p), FunnelKind::AttentionQk) => csi_attention_qk(p, fun_factor)?,
        (Resolved::Attention(p), _) => csi_value_output(p, fun_factor)?,
    };
    let check = check_funnel(&r, target.kind, &funnel)?;
    Ok((funnel, check))
}

fn check_funnel(r: &Resolved, kind: FunnelKind, f: &FunnelPair) -> Result<CsiCheck> {
    let (product, effective) = product_and_effective(r, kind, f)?;
    let (outer, inner) = product_factors(r, kind)?;
    let s = if outer.cols() < outer.rows().min(inner.cols()) {
        svd_of_product(&outer, &inner)?.s
    } else {
        svd(&product)?.s
    };
    let width = f.width();
    let oracle_residual = s[width.min(s.len())..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = effective.sub(&product)?.frobenius_norm();
    Ok(CsiCheck {
        width,
        inner: f.inner(),
        residual,
        oracle_residual,
        relative_gap: (residual - oracle_residual).abs() / product.frobenius_norm().max(f64::MIN_POSITIVE),
    })
}

// ---- funnel bundles ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelEntry {
    #[serde(flatten)]
    pub target: PairTarget,
    pub fun_factor: f64,
    pub f1: String,
    pub f2: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelManifest {
    pub funnels: Vec<FunnelEntry>,
}

/// Writes `funnels.json` and one `F1`/`F2` file per entry into `dir`.
pub fn save_funnels(funnels: &[(PairTarget, FunnelPair)], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = FunnelManifest::default();
    for (i, (target, f)) in funnels.iter().enumerate() {
        let (f1, f2) = (format!("funnel{i:04}.f1.mvdt"), format!("funnel{i:04}.f2.mvdt"));
        f.f1.save(dir.join(&f1))?;
        f.f2.save(dir.join(&f2))?;
        manifest.funnels.push(FunnelEntry {
            target: target.clone(),
            fun_factor: f.fun_factor,
            f1,
            f2,
        });
    }
    let path = dir.join(FUNNEL_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_funnels(manifest: &Path) -> Result<Vec<(PairTarget, FunnelPair)>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: FunnelManifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest, e))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    m.funnels
        .into_iter()
        .map(|e| {
            let mut f = FunnelPair::new(
                Tensor::load(root.join(&e.f1))?,
                Tensor::load(root.join(&e.f2))?,
                e.target.kind,
            )?;
            f.fun_factor = e.fun_factor;
            Ok((e.target, f))
        })
        .collect()
}

// ---- merging ---------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMerge {
    pub target: PairTarget,
    pub width: usize,
    pub params_before: usize,
    pub params_after: usize,
    /// Max-abs difference between funneled and merged forwards.
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub pairs: Vec<PairMerge>,
    pub max_abs_diff: f64,
    pub digest_before: String,
    pub digest_after: String,
}

/// Funneled and merged forwards of one pair on the same random input.
fn forward_both(
    r: &Resolved,
    merged: &Resolved,
    kind: FunnelKind,
    f: &FunnelPair,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    Ok(match (r, merged) {
        (Resolved::Linear(p), Resolved::Linear(m)) => {
            let x = Tensor::randn(&[p.c_in(), CHECK_ROWS], 1.0, rng);
            p.forward_funneled(f, &x)?.max_abs_diff(&m.forward(&x)?)
        }
        (Resolved::Conv(p), Resolved::Conv(m)) => {
            let x = Tensor::randn(&[p.c_in(), CHECK_IMAGE, CHECK_IMAGE], 1.0, rng);
            p.forward_funneled(f, &x)?.max_abs_diff(&m.forward(&x)?)
        }
        (Resolved::Attention(p), Resolved::Attention(m)) if kind == FunnelKind::AttentionQk => {
            let x = Tensor::randn(&[CHECK_ROWS, p.c_in()], 1.0, rng);
            p.logits(&x, Some(f))?.max_abs_diff(&m.logits(&x, None)?)
        }
        (Resolved::Attention(p), Resolved::Attention(m)) => {
            let x = Tensor::randn(&[CHECK_ROWS, p.c_in()], 1.0, rng);
            let funneled = x
                .matmul(&p.wv)?
                .matmul(&f.f1.transpose())?
                .matmul(&f.f2.transpose())?
                .matmul(&p.wo)?;
            funneled.max_abs_diff(&x.matmul(&m.wv)?.matmul(&m.wo)?)
        }
        _ => unreachable!("merge keeps the pair kind"),
    })
}

/// Folds every funnel into `store` and compares funneled and merged forwards
/// over `trials` random inputs per pair.
pub fn merge_store(
    store: &WeightStore,
    funnels: &[(PairTarget, FunnelPair)],
    trials: usize,
    seed: u64,
) -> Result<(WeightStore, MergeReport)> {
    let mut out = store.clone();
    let mut pairs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, (target, f)) in funnels.iter().enumerate() {
        if target.kind != f.kind {
            return Err(Error::Contract(format!(
                "entry {i}: funnel of kind {:?} listed as {:?}",
                f.kind, target.kind
            )));
        }
        for name in [&target.first, &target.second] {
            if !seen.insert(name.clone()) {
                return Err(Error::Contract(format!("tensor {name} is funneled twice")));
            }
        }
        let r = resolve(store, target)?;
        let wrap = |e: Error| Error::Contract(format!("{} / {}: {e}", target.first, target.second));
        let (merged, a, b) = match &r {
            Resolved::Linear(p) => {
                let m = merge_linear(p, f).map_err(wrap)?;
                (Resolved::Linear(m.clone()), m.w1, m.w2)
            }
            Resolved::Conv(p) => {
                let m = merge_conv(p, f).map_err(wrap)?;
                (Resolved::Conv(m.clone()), m.k1, m.k2)
            }
            Resolved::Attention(p) if target.kind == FunnelKind::AttentionQk => {
                let m = merge_attention(p, Some(f), None).map_err(wrap)?;
                (Resolved::Attention(m.clone()), m.wq, m.wk)
            }
            Resolved::Attention(p) => {
                let m = merge_attention(p, None, Some(f)).map_err(wrap)?;
                (Resolved::Attention(m.clone()), m.wv, m.wo)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut diff = 0.0f64;
        for _ in 0..trials {
            diff = diff.max(forward_both(&r, &merged, target.kind, f, &mut rng)?);
        }
        let before = store.get(&target.first)?.len() + store.get(&target.second)?.len();
        pairs.push(PairMerge {
            target: target.clone(),
            width: f.width(),
            params_before: before,
            params_after: a.len() + b.len(),
            max_abs_diff: diff,
        });
        out.tensors.insert(target.first.clone(), a);
        out.tensors.insert(target.second.clone(), b);
    }
    let max_abs_diff = pairs.iter().map(|p| p.max_abs_diff).fold(0.0, f64::max);
    let report = MergeReport {
        pairs,
        max_abs_diff,
        digest_before: store.digest(),
        digest_after: out.digest(),
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyunet::{load_net, save_net, ToyUNet, ToyUNetSpec, NET_MANIFEST};

    fn store(seed: u64) -> WeightStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = BTreeMap::new();
        t.insert("ff.w1".into(), Tensor::randn(&[6, 5], 1.0, &mut rng));
        t.insert("ff.w2".into(), Tensor::randn(&[4, 6], 1.0, &mut rng));
        t.insert("attn.wq".into(), Tensor::randn(&[5, 4], 1.0, &mut rng));
        t.insert("attn.wk".into(), Tensor::randn(&[5, 4], 1.0, &mut rng));
        t.insert("attn.wv".into(), Tensor::randn(&[5, 4], 1.0, &mut rng));
        t.insert("attn.wo".into(), Tensor::randn(&[4, 5], 1.0, &mut rng));
        t.insert("conv.k1".into(), Tensor::randn(&[3, 3, 4, 3], 1.0, &mut rng));
        t.insert("conv.k2".into(), Tensor::randn(&[3, 3, 2, 4], 1.0, &mut rng));
        t.insert("cross.wq".into(), Tensor::randn(&[5, 4], 1.0, &mut rng));
        t.insert("cross.wk".into(), Tensor::randn(&[5, 4], 1.0, &mut rng));
        WeightStore::new(t)
    }

    fn all_kinds() -> Vec<FunnelKind> {
        vec![
            FunnelKind::Linear,
            FunnelKind::AttentionQk,
            FunnelKind::AttentionVo,
            FunnelKind::Conv,
        ]
    }

    #[test]
    fn discovery_skips_cross_attention() {
        let pairs = discover_pairs(&store(0), &all_kinds());
        let names: Vec<&str> = pairs.iter().map(|p| p.first.as_str()).collect();
        assert_eq!(names, ["attn.wq", "attn.wv", "conv.k1", "ff.w1"]);
        assert_eq!(discover_pairs(&store(0), &[FunnelKind::Conv]).len(), 1);
    }

    #[test]
    fn csi_matches_truncation_for_every_kind() {
        let s = store(1);
        for mut t in discover_pairs(&s, &all_kinds()) {
            t.nonlinearity = Nonlinearity::Relu;
            let (_, check) = csi_for_target(&s, &t, 0.5).unwrap();
            assert!(check.relative_gap <= 1e-8, "{t:?}: {check:?}");
            assert!(check.oracle_residual > 0.0);
        }
    }

    #[test]
    fn merge_is_exact_and_round_trips() {
        let s = store(2);
        let funnels: Vec<_> = discover_pairs(&s, &all_kinds())
            .into_iter()
            .map(|t| {
                let f = csi_for_target(&s, &t, 0.5).unwrap().0;
                (t, f)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = save_funnels(&funnels, dir.path()).unwrap();
        let loaded = load_funnels(&path).unwrap();
        assert_eq!(loaded, funnels);
        let (merged, report) = merge_store(&s, &loaded, 10, 0).unwrap();
        assert!(report.max_abs_diff <= 1e-12, "{report:?}");
        assert!(merged.param_count() < s.param_count());
        assert_ne!(report.digest_after, report.digest_before);
        let wpath = save_weights(&merged, &dir.path().join("w"), "weights.json").unwrap();
        assert_eq!(load_weights(&wpath).unwrap(), merged);
    }

    #[test]
    fn identity_funnels_keep_the_digest() {
        let s = store(3);
        let funnels: Vec<_> = discover_pairs(&s, &all_kinds())
            .into_iter()
            .map(|t| {
                let inner = match t.kind {
                    FunnelKind::Linear => s.tensors[&t.first].rows(),
                    FunnelKind::Conv => s.tensors[&t.first].shape()[2],
                    _ => s.tensors[&t.first].cols(),
                };
                let kind = t.kind;
                (t, FunnelPair::identity(inner, kind))
            })
            .collect();
        let (merged, report) = merge_store(&s, &funnels, 3, 0).unwrap();
        assert_eq!(merged.digest(), s.digest());
        assert_eq!(report.digest_after, report.digest_before);
    }

    #[test]
    fn mismatched_manifests_are_rejected() {
        let s = store(4);
        let t = PairTarget::new(FunnelKind::Linear, "ff.w1", "ff.w2");
        let f = csi_for_target(&s, &t, 0.5).unwrap().0;
        let missing = PairTarget::new(FunnelKind::Linear, "ff.w1", "nope");
        assert!(matches!(
            merge_store(&s, &[(missing, f.clone())], 1, 0),
            Err(Error::Contract(_))
        ));
        let wrong_kind = PairTarget::new(FunnelKind::Conv, "conv.k1", "conv.k2");
        assert!(matches!(
            merge_store(&s, &[(wrong_kind, f.clone())], 1, 0),
            Err(Error::Contract(_))
        ));
        let vo = PairTarget::new(FunnelKind::Linear, "attn.wv", "attn.wo");
        assert!(merge_store(&s, &[(vo, f.clone())], 1, 0).is_err());
        assert!(matches!(
            merge_store(&s, &[(t.clone(), f.clone()), (t, f)], 1, 0),
            Err(Error::Contract(_))
        ));
        assert!(PairTarget::parse("linear:a").is_err());
        assert!(PairTarget::parse("bogus:a:b").is_err());
        assert_eq!(
            PairTarget::parse("attention_vo:a:b").unwrap().kind,
            FunnelKind::AttentionVo
        );
    }

    #[test]
    fn saved_networks_merge_through_manifests() {
        let spec = ToyUNetSpec {
            frames: 4,
            height: 8,
            width: 8,
            channels: vec![8, 16],
            down_blocks: 2,
            up_blocks: 2,
            cond_width: 8,
            ..ToyUNetSpec::default()
        };
        let net = ToyUNet::build(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_net(&net, dir.path()).unwrap();
        let s = load_weights(&dir.path().join(NET_MANIFEST)).unwrap();
        let targets = discover_pairs(&s, &[FunnelKind::AttentionQk, FunnelKind::AttentionVo]);
        assert!(!targets.is_empty());
        let funnels: Vec<_> = targets
            .into_iter()
            .map(|t| {
                let f = csi_for_target(&s, &t, 0.5).unwrap().0;
                (t, f)
            })
            .collect();
        let (merged, _) = merge_store(&s, &funnels, 2, 0).unwrap();
        let out = dir.path().join("merged");
        save_weights(&merged, &out, NET_MANIFEST).unwrap();
        let loaded = load_net(&out).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, c) = net.random_inputs(&mut rng);
        let a = loaded.forward(&x, &c).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert!(loaded.param_count() < net.param_count());
    }
}
