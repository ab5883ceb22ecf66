//! Binary checkpoint format.
//!
//! Layout: magic `FGCK`, little-endian u32 format version, little-endian
//! u32 meta length, a JSON meta block (shape table, agent dimensions,
//! optimizer counters and the configuration echo), then the payload —
//! every tensor as little-endian 8-byte floats in shape-table order.
//!
//! Replay buffers and RNG states are deliberately not persisted: a loaded
//! checkpoint reproduces agent behavior (deterministic actions and value
//! estimates) exactly, not the training-run internals.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fedgrid_core::nn::{AdamState, Mlp};
use fedgrid_core::sac::{AgentBundle, ReplayBuffer, DEFAULT_REPLAY_CAPACITY};
use rand::rngs::StdRng;
use rand::SeedableRng;

pub const MAGIC: &[u8; 4] = b"FGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    global_step: u64,
    /// Verbatim configuration echo (JSON text), round-tripped untouched.
    config_echo: String,
    agents: Vec<AgentMeta>,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentMeta {
    id: usize,
    obs_dim: usize,
    act_dim: usize,
    hidden: Vec<usize>,
    lr: f64,
    opt_steps: [u64; 3], // policy, critic0, critic1
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: u64,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub agents: Vec<AgentBundle>,
    pub config_echo: String,
    pub global_step: u64,
}

fn policy_dims(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut d = vec![obs_dim];
    d.extend_from_slice(hidden);
    d.push(2 * act_dim);
    d
}

fn critic_dims(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut d = vec![obs_dim + act_dim];
    d.extend_from_slice(hidden);
    d.push(1);
    d
}

fn hidden_of(net: &Mlp) -> Vec<usize> {
    let dims = net.dims();
    dims[1..dims.len() - 1].to_vec()
}

/// Tensor list of one agent in payload order.
fn agent_tensors(agent: &AgentBundle) -> Vec<(String, Vec<f64>)> {
    let p = format!("agent{}", agent.id);
    let mut out = vec![
        (format!("{p}.policy"), agent.policy.flatten()),
        (format!("{p}.critic0"), agent.critics[0].flatten()),
        (format!("{p}.critic1"), agent.critics[1].flatten()),
        (format!("{p}.target0"), agent.targets[0].flatten()),
        (format!("{p}.target1"), agent.targets[1].flatten()),
    ];
    let (pm, pv) = agent.policy_opt.moments();
    out.push((format!("{p}.opt.policy.m"), pm.to_vec()));
    out.push((format!("{p}.opt.policy.v"), pv.to_vec()));
    for i in 0..2 {
        let (m, v) = agent.critic_opts[i].moments();
        out.push((format!("{p}.opt.critic{i}.m"), m.to_vec()));
        out.push((format!("{p}.opt.critic{i}.v"), v.to_vec()));
    }
    out
}

pub fn save(path: &Path, agents: &[AgentBundle], config_echo: &str, global_step: u64) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut agent_meta = Vec::new();
    for agent in agents {
        agent_meta.push(AgentMeta {
            id: agent.id,
            obs_dim: agent.obs_dim,
            act_dim: agent.act_dim,
            hidden: hidden_of(&agent.policy),
            lr: agent.policy_opt.lr,
            opt_steps: [
                agent.policy_opt.step_count(),
                agent.critic_opts[0].step_count(),
                agent.critic_opts[1].step_count(),
            ],
        });
        for (name, data) in agent_tensors(agent) {
            tensors.push(TensorMeta { name, len: data.len() as u64 });
            payload.extend_from_slice(&data);
        }
    }
    let meta = CheckpointMeta {
        global_step,
        config_echo: config_echo.to_string(),
        agents: agent_meta,
        tensors,
    };
    let meta_bytes = serde_json::to_vec(&meta).context("serializing checkpoint meta")?;

    let mut f = std::fs::File::create(path)
        .with_context(|| format!("cannot create checkpoint {}", path.display()))?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&meta_bytes)?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in &payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::fs::File::open(path)
        .with_context(|| format!("cannot open checkpoint {}", path.display()))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).context("checkpoint truncated before magic")?;
    if &magic != MAGIC {
        bail!("not a fedgrid checkpoint (bad magic {:02x?})", magic);
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word).context("checkpoint truncated before version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        bail!("unsupported checkpoint version {version} (expected {VERSION})");
    }
    f.read_exact(&mut word).context("checkpoint truncated before meta length")?;
    let meta_len = u32::from_le_bytes(word) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    f.read_exact(&mut meta_bytes).context("checkpoint truncated inside meta block")?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes).context("checkpoint meta is not valid JSON")?;

    let total: u64 = meta.tensors.iter().map(|t| t.len).sum();
    let mut payload_bytes = Vec::new();
    f.read_to_end(&mut payload_bytes)?;
    if payload_bytes.len() as u64 != total * 8 {
        bail!(
            "checkpoint payload has {} bytes, shape table requires {}",
            payload_bytes.len(),
            total * 8
        );
    }
    let mut payload = Vec::with_capacity(total as usize);
    for chunk in payload_bytes.chunks_exact(8) {
        payload.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }

    let mut tensor_iter = meta.tensors.iter();
    let mut offset = 0usize;
    let mut next_tensor = |expect_name: &str| -> Result<&[f64]> {
        let t = tensor_iter
            .next()
            .with_context(|| format!("shape table ended early, expected tensor {expect_name}"))?;
        if t.name != expect_name {
            bail!("unexpected tensor '{}', expected '{}'", t.name, expect_name);
        }
        let data = &payload[offset..offset + t.len as usize];
        offset += t.len as usize;
        Ok(data)
    };

    let mut agents = Vec::with_capacity(meta.agents.len());
    for am in &meta.agents {
        let p = format!("agent{}", am.id);
        let mut dummy_rng = StdRng::seed_from_u64(0);
        let mut policy = Mlp::new(&policy_dims(am.obs_dim, am.act_dim, &am.hidden), &mut dummy_rng);
        let cd = critic_dims(am.obs_dim, am.act_dim, &am.hidden);
        let mut critics = [Mlp::new(&cd, &mut dummy_rng), Mlp::new(&cd, &mut dummy_rng)];
        let mut targets = [critics[0].clone(), critics[1].clone()];

        let restore = |net: &mut Mlp, data: &[f64], what: &str| -> Result<()> {
            net.unflatten_from(data)
                .with_context(|| format!("shape mismatch restoring {what} of agent {}", am.id))
        };
        restore(&mut policy, next_tensor(&format!("{p}.policy"))?, "policy")?;
        restore(&mut critics[0], next_tensor(&format!("{p}.critic0"))?, "critic0")?;
        restore(&mut critics[1], next_tensor(&format!("{p}.critic1"))?, "critic1")?;
        restore(&mut targets[0], next_tensor(&format!("{p}.target0"))?, "target0")?;
        restore(&mut targets[1], next_tensor(&format!("{p}.target1"))?, "target1")?;

        let pm = next_tensor(&format!("{p}.opt.policy.m"))?.to_vec();
        let pv = next_tensor(&format!("{p}.opt.policy.v"))?.to_vec();
        if pm.len() != policy.n_params() {
            bail!("optimizer moment length {} does not match policy ({})", pm.len(), policy.n_params());
        }
        let policy_opt = AdamState::restore(am.lr, pm, pv, am.opt_steps[0])?;
        let mut critic_opts = Vec::with_capacity(2);
        for i in 0..2 {
            let m = next_tensor(&format!("{p}.opt.critic{i}.m"))?.to_vec();
            let v = next_tensor(&format!("{p}.opt.critic{i}.v"))?.to_vec();
            if m.len() != critics[i].n_params() {
                bail!("optimizer moment length {} does not match critic{i} ({})", m.len(), critics[i].n_params());
            }
            critic_opts.push(AdamState::restore(am.lr, m, v, am.opt_steps[1 + i])?);
        }
        let critic_opts: [AdamState; 2] = critic_opts.try_into().expect("two critic optimizers");

        let agent = AgentBundle {
            id: am.id,
            obs_dim: am.obs_dim,
            act_dim: am.act_dim,
            policy,
            critics,
            targets,
            policy_opt,
            critic_opts,
            buffer: ReplayBuffer::new(DEFAULT_REPLAY_CAPACITY),
            rng: StdRng::seed_from_u64(am.id as u64),
        };
        agent.validate().context("restored agent failed validation")?;
        agents.push(agent);
    }
    if tensor_iter.next().is_some() {
        bail!("shape table lists more tensors than were restored");
    }
    Ok(Checkpoint { agents, config_echo: meta.config_echo, global_step: meta.global_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedgrid_core::sac::SacHyper;

    fn agents_for_test() -> Vec<AgentBundle> {
        (0..2)
            .map(|i| AgentBundle::new(i, 4, 1, &[8, 8], &SacHyper::default(), 42 + i as u64))
            .collect()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fgck");
        let p2 = dir.path().join("b.fgck");
        let agents = agents_for_test();
        save(&p1, &agents, r#"{"demo":1}"#, 123).unwrap();
        let ck = load(&p1).unwrap();
        save(&p2, &ck.agents, &ck.config_echo, ck.global_step).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_agents_behave_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fgck");
        let agents = agents_for_test();
        save(&path, &agents, "{}", 0).unwrap();
        let loaded = load(&path).unwrap().agents;
        let probe = [0.97, 1.01, 0.99, 1.0];
        for (a, b) in agents.iter().zip(&loaded) {
            assert_eq!(a.act_deterministic(&probe).unwrap(), b.act_deterministic(&probe).unwrap());
            assert_eq!(a.critics[0].flatten(), b.critics[0].flatten());
            assert_eq!(a.policy_opt.step_count(), b.policy_opt.step_count());
        }
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fgck");
        save(&path, &agents_for_test(), "{}", 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "unexpected error: {err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fgck");
        save(&path, &agents_for_test(), "{}", 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("payload"), "unexpected error: {err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fgck");
        save(&path, &agents_for_test(), "{}", 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "unexpected error: {err}");
    }
}
