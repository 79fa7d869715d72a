//! Model persistence: a versioned, self-describing line format.
//!
//! Header lines are `key value` pairs; tree structure follows as an indexed
//! node list, one node per line:
//!
//! ```text
//! <idx> split <feature> <threshold> <left_idx> <right_idx>
//! <idx> leaf <n_very_close> <n_close> <n_safe>
//! ```
//!
//! Children always carry larger indices than their parent, so a file cannot
//! encode a cycle.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use super::forest::{FeatureSubset, ForestModel, ForestParams};
use super::tree::{TreeNode, TreeParams};
use super::{
    ForestModelFit, SignalScope, ThresholdModel, TrainedModel, TrainedRoster, TreeModelFit,
    VoteModel,
};
use crate::error::{Error, Result};
use crate::signal::AttenuationThresholds;

const MAGIC: &str = "proxmodel v1";

/// Save one model with its roster metadata.
pub fn save_model<W: Write>(
    mut w: W,
    model_no: u8,
    name: &str,
    device: &str,
    model: &TrainedModel,
) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "model_no {model_no}")?;
    writeln!(w, "name {name}")?;
    writeln!(w, "device {device}")?;
    match model {
        TrainedModel::Threshold(m) => {
            writeln!(w, "family threshold")?;
            writeln!(w, "very_close_db {}", m.thresholds.very_close_db)?;
            writeln!(w, "close_db {}", m.thresholds.close_db)?;
            writeln!(w, "correction_db {}", m.correction_db)?;
            writeln!(w, "tx_power_dbm {}", m.tx_power_dbm)?;
        }
        TrainedModel::Tree(m) => {
            writeln!(w, "family tree")?;
            writeln!(w, "scope {}", m.scope.name())?;
            write_tree_params(&mut w, &m.params)?;
            write_nodes(&mut w, &m.root)?;
        }
        TrainedModel::Forest(m) => {
            writeln!(w, "family forest")?;
            writeln!(w, "scope {}", m.scope.name())?;
            write_tree_params(&mut w, &m.model.params.tree)?;
            writeln!(w, "n_trees {}", m.model.params.n_trees)?;
            writeln!(w, "bootstrap {}", m.model.params.bootstrap)?;
            writeln!(
                w,
                "features_per_split {}",
                m.model.params.features_per_split.name()
            )?;
            writeln!(w, "seed {}", m.model.params.seed)?;
            for (i, tree) in m.model.trees.iter().enumerate() {
                writeln!(w, "tree {i}")?;
                write_nodes(&mut w, tree)?;
            }
        }
        TrainedModel::Vote(m) => {
            writeln!(w, "family vote")?;
            writeln!(w, "members {} {} {}", m.members[0], m.members[1], m.members[2])?;
            writeln!(w, "weights {} {} {}", m.weights[0], m.weights[1], m.weights[2])?;
        }
    }
    writeln!(w, "end")?;
    Ok(())
}

fn write_tree_params<W: Write>(w: &mut W, p: &TreeParams) -> io::Result<()> {
    match p.max_depth {
        Some(d) => writeln!(w, "max_depth {d}")?,
        None => writeln!(w, "max_depth none")?,
    }
    writeln!(w, "min_samples_split {}", p.min_samples_split)?;
    writeln!(w, "min_samples_leaf {}", p.min_samples_leaf)
}

fn write_nodes<W: Write>(w: &mut W, root: &TreeNode) -> io::Result<()> {
    // Preorder flatten; children get indices after their parent.
    fn flatten(node: &TreeNode, out: &mut Vec<String>) -> usize {
        let idx = out.len();
        out.push(String::new());
        match node {
            TreeNode::Leaf { class_counts } => {
                out[idx] = format!(
                    "{idx} leaf {} {} {}",
                    class_counts[0], class_counts[1], class_counts[2]
                );
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let left_idx = flatten(left, out);
                let right_idx = flatten(right, out);
                out[idx] = format!("{idx} split {feature} {threshold} {left_idx} {right_idx}");
            }
        }
        idx
    }
    let mut lines = Vec::new();
    flatten(root, &mut lines);
    writeln!(w, "nodes {}", lines.len())?;
    for line in lines {
        writeln!(w, "{line}")?;
    }
    Ok(())
}

struct Lines<R: BufRead> {
    inner: R,
    line_no: u64,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<Option<String>> {
        let mut buf = String::new();
        loop {
            buf.clear();
            let n = self.inner.read_line(&mut buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = buf.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok(Some(line.to_string()));
        }
    }

    fn expect_line(&mut self) -> Result<String> {
        self.next_line()?
            .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))
    }

    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::ModelFormat(format!("line {}: {}", self.line_no, msg.into()))
    }
}

fn kv<'a>(line: &'a str, key: &str, lines_at: u64) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::ModelFormat(format!("line {lines_at}: expected `{key} ...`")))
}

/// Load one model file; returns roster metadata plus the model.
pub fn load_model<R: Read>(r: R) -> Result<(u8, String, String, TrainedModel)> {
    let mut lines = Lines {
        inner: BufReader::new(r),
        line_no: 0,
    };
    let magic = lines.expect_line()?;
    if magic != MAGIC {
        return Err(lines.bad(format!("bad magic `{magic}`, expected `{MAGIC}`")));
    }
    let model_no: u8 = kv(&lines.expect_line()?, "model_no", lines.line_no)?
        .parse()
        .map_err(|_| lines.bad("bad model_no"))?;
    let name = kv(&lines.expect_line()?, "name", lines.line_no)?.to_string();
    let device = kv(&lines.expect_line()?, "device", lines.line_no)?.to_string();
    let family = kv(&lines.expect_line()?, "family", lines.line_no)?.to_string();

    let model = match family.as_str() {
        "threshold" => {
            let vc: f64 = parse_kv(&mut lines, "very_close_db")?;
            let c: f64 = parse_kv(&mut lines, "close_db")?;
            let corr: f64 = parse_kv(&mut lines, "correction_db")?;
            let tx: f64 = parse_kv(&mut lines, "tx_power_dbm")?;
            TrainedModel::Threshold(ThresholdModel {
                thresholds: AttenuationThresholds::new(vc, c)?,
                correction_db: corr,
                tx_power_dbm: tx,
            })
        }
        "tree" => {
            let scope = SignalScope::parse(kv(&lines.expect_line()?, "scope", lines.line_no)?)?;
            let params = read_tree_params(&mut lines)?;
            let root = read_nodes(&mut lines)?;
            TrainedModel::Tree(TreeModelFit {
                scope,
                params,
                root,
            })
        }
        "forest" => {
            let scope = SignalScope::parse(kv(&lines.expect_line()?, "scope", lines.line_no)?)?;
            let tree_params = read_tree_params(&mut lines)?;
            let n_trees: usize = parse_kv(&mut lines, "n_trees")?;
            let bootstrap: bool = parse_kv(&mut lines, "bootstrap")?;
            let feats_raw = kv(&lines.expect_line()?, "features_per_split", lines.line_no)?.to_string();
            let features_per_split = match feats_raw.as_str() {
                "all" => FeatureSubset::All,
                "sqrt" => FeatureSubset::Sqrt,
                n => FeatureSubset::Count(
                    n.parse()
                        .map_err(|_| lines.bad("bad features_per_split"))?,
                ),
            };
            let seed: u64 = parse_kv(&mut lines, "seed")?;
            let mut trees = Vec::with_capacity(n_trees);
            for i in 0..n_trees {
                let header = lines.expect_line()?;
                let idx: usize = kv(&header, "tree", lines.line_no)?
                    .parse()
                    .map_err(|_| lines.bad("bad tree index"))?;
                if idx != i {
                    return Err(lines.bad(format!("expected tree {i}, found {idx}")));
                }
                trees.push(read_nodes(&mut lines)?);
            }
            TrainedModel::Forest(ForestModelFit {
                scope,
                model: ForestModel {
                    trees,
                    params: ForestParams {
                        n_trees,
                        tree: tree_params,
                        features_per_split,
                        bootstrap,
                        seed,
                    },
                },
            })
        }
        "vote" => {
            let members = parse_triple::<u8>(&mut lines, "members")?;
            let weights = parse_triple::<f64>(&mut lines, "weights")?;
            TrainedModel::Vote(VoteModel { weights, members })
        }
        other => return Err(lines.bad(format!("unknown family `{other}`"))),
    };

    let end = lines.expect_line()?;
    if end != "end" {
        return Err(lines.bad("expected `end`"));
    }
    Ok((model_no, name, device, model))
}

fn parse_kv<R: BufRead, T: std::str::FromStr>(lines: &mut Lines<R>, key: &str) -> Result<T> {
    let line = lines.expect_line()?;
    kv(&line, key, lines.line_no)?
        .parse()
        .map_err(|_| lines.bad(format!("bad value for `{key}`")))
}

fn parse_triple<T: std::str::FromStr + Copy + Default>(
    lines: &mut Lines<impl BufRead>,
    key: &str,
) -> Result<[T; 3]> {
    let line = lines.expect_line()?;
    let rest = kv(&line, key, lines.line_no)?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(lines.bad(format!("`{key}` needs three values")));
    }
    let mut out = [T::default(); 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .parse()
            .map_err(|_| lines.bad(format!("bad value in `{key}`")))?;
    }
    Ok(out)
}

fn read_tree_params<R: BufRead>(lines: &mut Lines<R>) -> Result<TreeParams> {
    let depth_raw = kv(&lines.expect_line()?, "max_depth", lines.line_no)?.to_string();
    let max_depth = if depth_raw == "none" {
        None
    } else {
        Some(
            depth_raw
                .parse()
                .map_err(|_| lines.bad("bad max_depth"))?,
        )
    };
    let min_samples_split: usize = parse_kv(lines, "min_samples_split")?;
    let min_samples_leaf: usize = parse_kv(lines, "min_samples_leaf")?;
    Ok(TreeParams {
        max_depth,
        min_samples_split,
        min_samples_leaf,
    })
}

fn read_nodes<R: BufRead>(lines: &mut Lines<R>) -> Result<TreeNode> {
    let count: usize = parse_kv(lines, "nodes")?;
    if count == 0 {
        return Err(lines.bad("node list cannot be empty"));
    }
    enum Raw {
        Leaf([u64; 3]),
        Split(usize, f64, usize, usize),
    }
    let mut raw: Vec<Option<Raw>> = (0..count).map(|_| None).collect();
    for _ in 0..count {
        let line = lines.expect_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let idx: usize = parts
            .first()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| lines.bad("bad node index"))?;
        if idx >= count {
            return Err(lines.bad(format!("node index {idx} out of range")));
        }
        let node = match parts.get(1).copied() {
            Some("leaf") if parts.len() == 5 => {
                let mut counts = [0u64; 3];
                for (slot, part) in counts.iter_mut().zip(&parts[2..5]) {
                    *slot = part.parse().map_err(|_| lines.bad("bad leaf count"))?;
                }
                Raw::Leaf(counts)
            }
            Some("split") if parts.len() == 6 => {
                let feature: usize =
                    parts[2].parse().map_err(|_| lines.bad("bad feature"))?;
                let threshold: f64 =
                    parts[3].parse().map_err(|_| lines.bad("bad threshold"))?;
                let left: usize = parts[4].parse().map_err(|_| lines.bad("bad child"))?;
                let right: usize = parts[5].parse().map_err(|_| lines.bad("bad child"))?;
                if left <= idx || right <= idx || left >= count || right >= count {
                    return Err(lines.bad("child indices must follow their parent"));
                }
                Raw::Split(feature, threshold, left, right)
            }
            _ => return Err(lines.bad("expected `leaf` or `split` node")),
        };
        if raw[idx].replace(node).is_some() {
            return Err(lines.bad(format!("duplicate node index {idx}")));
        }
    }

    fn build(raw: &[Option<Raw>], idx: usize) -> Result<TreeNode> {
        match raw[idx]
            .as_ref()
            .ok_or_else(|| Error::ModelFormat(format!("missing node {idx}")))?
        {
            Raw::Leaf(counts) => Ok(TreeNode::Leaf {
                class_counts: *counts,
            }),
            Raw::Split(feature, threshold, left, right) => Ok(TreeNode::Split {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(build(raw, *left)?),
                right: Box::new(build(raw, *right)?),
            }),
        }
    }
    build(&raw, 0)
}

/// Persist a device roster as one file per model under `dir`.
pub fn save_roster(roster: &TrainedRoster, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let specs = super::roster();
    for (&no, model) in &roster.models {
        let name = specs
            .iter()
            .find(|s| s.roster_no == no)
            .map_or("custom", |s| s.name);
        let path = dir.join(format!("model_{no:02}.txt"));
        let mut file = fs::File::create(&path)?;
        save_model(&mut file, no, name, &roster.device, model)?;
    }
    Ok(())
}

/// Load every model file in `dir` into a roster. Missing roster numbers are
/// simply absent from the result.
pub fn load_roster(dir: &Path) -> Result<TrainedRoster> {
    let mut models = BTreeMap::new();
    let mut device = String::new();
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .collect::<io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("model_") && n.ends_with(".txt"))
        })
        .collect();
    entries.sort();
    for path in entries {
        let file = fs::File::open(&path)?;
        let (no, _name, dev, model) = load_model(file)?;
        if device.is_empty() {
            device = dev;
        } else if device != dev {
            return Err(Error::ModelFormat(format!(
                "{}: device `{dev}` differs from `{device}`",
                path.display()
            )));
        }
        models.insert(no, model);
    }
    Ok(TrainedRoster { device, models })
}
