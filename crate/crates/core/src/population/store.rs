//! Population directories: a `manifest` file plus one `agent_<k>.txt` per
//! snapshot. Agent files start with `key value` provenance lines and end with
//! the policy weights.

use super::{AgentSnapshot, Population, Provenance};
use crate::envs::{EnvId, TaskBias};
use crate::error::{Error, Result};
use crate::numcore::weights::{mlp_from_lines, mlp_to_text};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationManifest {
    pub env: EnvId,
    pub agents: usize,
}

fn agent_path(dir: &Path, k: usize) -> std::path::PathBuf {
    dir.join(format!("agent_{k}.txt"))
}

fn agent_text(policy_text: &str, p: &Provenance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method {}", p.method);
    let mask: Vec<String> = p.mask.iter().map(|m| m.to_string()).collect();
    let _ = writeln!(out, "mask {}", if mask.is_empty() { "none".into() } else { mask.join(" ") });
    let _ = writeln!(
        out,
        "bias {}",
        p.bias.map_or_else(|| "none".to_string(), |b| b.to_string())
    );
    let _ = writeln!(out, "snapshot_index {}", p.snapshot_index);
    let _ = writeln!(out, "validation_score {:?}", p.validation_score);
    out.push_str(policy_text);
    out
}

pub fn save_population(dir: &Path, pop: &Population) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, (snap, policy)) in pop.snapshots().iter().zip(pop.policies()).enumerate() {
        std::fs::write(agent_path(dir, k), agent_text(&mlp_to_text(policy.net()), &snap.provenance))?;
    }
    std::fs::write(
        dir.join("manifest"),
        format!("env {}\nagents {}\n", pop.env.name(), pop.len()),
    )?;
    Ok(())
}

fn field<'a, I: Iterator<Item = (usize, &'a str)>>(lines: &mut I, key: &str, file: &str) -> Result<&'a str> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{file}: missing '{key}' line")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::trim)
        .ok_or_else(|| Error::Parse(format!("{file}:{}: expected '{key} <value>'", n + 1)))
}

fn parse_num<T: std::str::FromStr>(v: &str, file: &str, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Parse(format!("{file}: bad {key} '{v}': {e}")))
}

pub fn read_manifest(dir: &Path) -> Result<PopulationManifest> {
    let text = std::fs::read_to_string(dir.join("manifest"))?;
    let mut lines = text.lines().enumerate();
    let env: EnvId = field(&mut lines, "env", "manifest")?.parse()?;
    let agents = parse_num(field(&mut lines, "agents", "manifest")?, "manifest", "agents")?;
    Ok(PopulationManifest { env, agents })
}

fn parse_agent(text: &str, file: &str) -> Result<(AgentSnapshot, crate::numcore::Mlp)> {
    let mut lines = text.lines().enumerate();
    let method = field(&mut lines, "method", file)?.parse()?;
    let mask = match field(&mut lines, "mask", file)? {
        "none" => Vec::new(),
        m => m
            .split_whitespace()
            .map(|x| parse_num(x, file, "mask"))
            .collect::<Result<Vec<usize>>>()?,
    };
    let bias = match field(&mut lines, "bias", file)? {
        "none" => None,
        b => Some(b.parse::<TaskBias>()?),
    };
    let snapshot_index = parse_num(field(&mut lines, "snapshot_index", file)?, file, "snapshot_index")?;
    let validation_score = parse_num(field(&mut lines, "validation_score", file)?, file, "validation_score")?;
    let net = mlp_from_lines(&mut lines)?;
    Ok((
        AgentSnapshot {
            params: net.params(),
            provenance: Provenance {
                method,
                mask,
                bias,
                snapshot_index,
                validation_score,
            },
        },
        net,
    ))
}

pub fn load_population(dir: &Path) -> Result<Population> {
    let manifest = read_manifest(dir)?;
    let mut snaps = Vec::with_capacity(manifest.agents);
    for k in 0..manifest.agents {
        let path = agent_path(dir, k);
        let text = std::fs::read_to_string(&path)?;
        let name = path.display().to_string();
        let (snap, net) = parse_agent(&text, &name)?;
        let expected = super::hidden_sizes(manifest.env);
        let hidden: Vec<usize> = net.layers()[..net.layers().len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect();
        if hidden != expected || net.in_dim() != super::feature_dim(manifest.env) {
            return Err(Error::Shape(format!(
                "{name}: network shape does not match a {} policy",
                manifest.env
            )));
        }
        snaps.push(snap);
    }
    Population::new(manifest.env, snaps)
}
