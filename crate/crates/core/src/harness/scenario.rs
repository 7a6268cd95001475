//! Scenario files: a human-readable TOML tree describing parameters,
//! validator roles, actors, client scripts, delay mode and the property
//! checks to run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, KeyStore, SignerId};
use crate::entities::client::{Behavior, ScriptEntry, TxTemplate};
use crate::model::{sha256, ActorId, ObjectId, OwnedObject, Quorums, SimTime, SystemParams};
use crate::sim::net::DelayMode;
use crate::vm::{CallSpec, Command, ProgramKind, ProgramState, SplitPart, COIN};

use super::checks::PropertyId;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ParamsCfg {
    pub n: u32,
    pub f: u32,
    pub p: u32,
    #[serde(default = "default_delta")]
    pub delta: u64,
    #[serde(default)]
    pub gst_deltas: u64,
}

fn default_delta() -> u64 {
    100
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RunCfg {
    #[serde(default)]
    pub mode: DelayMode,
    #[serde(default = "default_horizon")]
    pub horizon_deltas: u64,
    #[serde(default = "default_pre_gst_cap")]
    pub pre_gst_cap_deltas: u64,
    #[serde(default = "default_drop_percent")]
    pub drop_probability_percent: u32,
    #[serde(default = "default_key_seed")]
    pub key_seed: u64,
}

fn default_horizon() -> u64 {
    40
}

fn default_pre_gst_cap() -> u64 {
    20
}

fn default_drop_percent() -> u32 {
    30
}

fn default_key_seed() -> u64 {
    7
}

impl Default for RunCfg {
    fn default() -> Self {
        RunCfg {
            mode: DelayMode::Synchronous,
            horizon_deltas: default_horizon(),
            pre_gst_cap_deltas: default_pre_gst_cap(),
            drop_probability_percent: default_drop_percent(),
            key_seed: default_key_seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyCfg {
    Silent,
    EquivocateVotes,
    ConflictingProposals,
    WithholdThenRelease,
    ArbitraryJustified,
    BadLeader,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ByzCfg {
    pub index: u32,
    pub strategy: StrategyCfg,
    #[serde(default = "default_release")]
    pub release_at_deltas: u64,
}

fn default_release() -> u64 {
    10
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct UserCfg {
    pub name: String,
    #[serde(default)]
    pub coins: Vec<u64>,
    #[serde(default)]
    pub behavior: Behavior,
    #[serde(default)]
    pub local_validator: Option<u32>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ReactiveCfg {
    pub name: String,
    pub program: String,
    #[serde(default)]
    pub init: i64,
    #[serde(default)]
    pub coins: Vec<u64>,
    #[serde(default)]
    pub leader_offset: u32,
    #[serde(default)]
    pub initiate_immediate: bool,
    #[serde(default)]
    pub balances: BTreeMap<String, u64>,
}

/// TOML-friendly command spelling; owners are actor names resolved against
/// the scenario's actor table.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandCfg {
    Split { object: String, parts: Vec<PartCfg> },
    Merge { objects: Vec<String> },
    CreateObject { type_tag: String, payload: u64, owner: String },
    CreateReactiveActor { program: String, init: i64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PartCfg {
    pub amount: u64,
    pub owner: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ScriptTxCfg {
    pub kind: String,
    #[serde(default)]
    pub consume: Vec<String>,
    #[serde(default)]
    pub code: Vec<CommandCfg>,
    #[serde(default)]
    pub recipient: Option<String>,
    #[serde(default)]
    pub call: Option<CallSpec>,
    #[serde(default)]
    pub code_pre: Vec<CommandCfg>,
    #[serde(default)]
    pub code_post: Vec<CommandCfg>,
    #[serde(default)]
    pub to_validators: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ScriptCfg {
    #[serde(default)]
    pub at_deltas: u64,
    pub user: String,
    #[serde(default)]
    pub after_confirm: Option<u64>,
    #[serde(default)]
    pub sn: Option<u64>,
    pub tx: Vec<ScriptTxCfg>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct ChecksCfg {
    #[serde(default)]
    pub props: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ExploreCfg {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_max_schedules")]
    pub max_schedules: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_depth() -> usize {
    6
}

fn default_max_schedules() -> usize {
    200_000
}

fn default_max_steps() -> usize {
    3_000
}

impl Default for ExploreCfg {
    fn default() -> Self {
        ExploreCfg {
            depth: default_depth(),
            max_schedules: default_max_schedules(),
            max_steps: default_max_steps(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Scenario {
    pub params: ParamsCfg,
    #[serde(default)]
    pub run: RunCfg,
    #[serde(default)]
    pub byzantine: Vec<ByzCfg>,
    #[serde(default)]
    pub users: Vec<UserCfg>,
    #[serde(default)]
    pub reactive: Vec<ReactiveCfg>,
    #[serde(default)]
    pub script: Vec<ScriptCfg>,
    #[serde(default)]
    pub checks: ChecksCfg,
    #[serde(default)]
    pub explore: ExploreCfg,
    /// Safety suites keep the Byzantine count within f; exploratory runs
    /// beyond resilience must say so explicitly.
    #[serde(default)]
    pub beyond_resilience: bool,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn compile(&self) -> Result<Compiled, ScenarioError> {
        let params = SystemParams {
            n: self.params.n,
            f: self.params.f,
            p: self.params.p,
            delta_bound: self.params.delta,
            gst: self.params.gst_deltas * self.params.delta,
        };
        let quorums = params.quorums().map_err(|e| invalid(e.to_string()))?;

        if !self.beyond_resilience && self.byzantine.len() as u32 > self.params.f {
            return Err(invalid(format!(
                "{} byzantine validators exceed f={} (set beyond_resilience for exploratory runs)",
                self.byzantine.len(),
                self.params.f
            )));
        }
        let mut byzantine = BTreeMap::new();
        for b in &self.byzantine {
            if b.index >= self.params.n {
                return Err(invalid(format!("byzantine index {} out of range", b.index)));
            }
            if byzantine.insert(b.index, b.clone()).is_some() {
                return Err(invalid(format!("duplicate byzantine index {}", b.index)));
            }
        }

        let mut keys = KeyStore::default();
        for v in 0..params.n {
            let mut material = self.run.key_seed.to_be_bytes().to_vec();
            material.extend_from_slice(&v.to_be_bytes());
            keys.register(&KeyPair::new(SignerId::Validator(v), sha256(&material)));
        }

        let mut actor_kinds: BTreeMap<String, ActorId> = BTreeMap::new();
        for u in &self.users {
            if actor_kinds.insert(u.name.clone(), ActorId::user(&u.name)).is_some() {
                return Err(invalid(format!("duplicate actor name {}", u.name)));
            }
        }
        for r in &self.reactive {
            if actor_kinds.insert(r.name.clone(), ActorId::reactive(&r.name)).is_some() {
                return Err(invalid(format!("duplicate actor name {}", r.name)));
            }
        }
        let resolve = |name: &str| -> Result<ActorId, ScenarioError> {
            actor_kinds
                .get(name)
                .cloned()
                .ok_or_else(|| invalid(format!("unknown actor {name}")))
        };

        let mut users = Vec::new();
        for u in &self.users {
            let mut material = self.run.key_seed.to_be_bytes().to_vec();
            material.extend_from_slice(u.name.as_bytes());
            let key = KeyPair::new(SignerId::User(u.name.clone()), sha256(&material));
            keys.register(&key);
            if let Some(v) = u.local_validator {
                if v >= params.n {
                    return Err(invalid(format!("local_validator {} out of range", v)));
                }
            }
            let genesis: Vec<OwnedObject> = u
                .coins
                .iter()
                .enumerate()
                .map(|(i, &amount)| {
                    OwnedObject::coin(format!("g:{}:{}", u.name, i), amount, ActorId::user(&u.name))
                })
                .collect();
            users.push(CompiledUser {
                name: u.name.clone(),
                key,
                behavior: u.behavior,
                genesis,
                local_validator: u.local_validator,
                script: Vec::new(),
            });
        }

        let mut reactive = Vec::new();
        for r in &self.reactive {
            let program =
                crate::vm::programs::parse_program(&r.program).map_err(|e| invalid(e.to_string()))?;
            let mut state = ProgramState::initial(program, r.init);
            if !r.balances.is_empty() {
                match &mut state {
                    ProgramState::Vault { balances } => {
                        *balances = r.balances.clone();
                    }
                    _ => return Err(invalid("balances are only meaningful for vault programs")),
                }
            }
            let genesis: Vec<OwnedObject> = r
                .coins
                .iter()
                .enumerate()
                .map(|(i, &amount)| {
                    OwnedObject::coin(format!("g:{}:{}", r.name, i), amount, ActorId::reactive(&r.name))
                })
                .collect();
            reactive.push(CompiledRa {
                actor: ActorId::reactive(&r.name),
                program,
                state,
                genesis,
                leader_offset: r.leader_offset,
                initiate_immediate: r.initiate_immediate,
            });
        }

        for (idx, s) in self.script.iter().enumerate() {
            let user = users
                .iter_mut()
                .find(|u| u.name == s.user)
                .ok_or_else(|| invalid(format!("script {idx}: unknown user {}", s.user)))?;
            if s.tx.is_empty() {
                return Err(invalid(format!("script {idx}: no transactions")));
            }
            if user.behavior == Behavior::Honest && s.tx.len() > 1 {
                return Err(invalid(format!(
                    "script {idx}: honest user {} cannot emit conflicting variants",
                    s.user
                )));
            }
            let mut variants = Vec::new();
            for t in &s.tx {
                let consume: Vec<ObjectId> = t.consume.iter().map(|s| ObjectId(s.clone())).collect();
                let template = match t.kind.as_str() {
                    "ua" => TxTemplate {
                        is_call: false,
                        consume,
                        code: compile_commands(&t.code, &resolve)?,
                        recipient: None,
                        code_pre: vec![],
                        call: None,
                        code_post: vec![],
                        to_validators: t.to_validators.clone(),
                    },
                    "ua_ra" => {
                        let recipient_name = t
                            .recipient
                            .as_ref()
                            .ok_or_else(|| invalid(format!("script {idx}: missing recipient")))?;
                        let recipient = resolve(recipient_name)?;
                        if !recipient.is_reactive() {
                            return Err(invalid(format!(
                                "script {idx}: recipient {recipient_name} is not reactive"
                            )));
                        }
                        TxTemplate {
                            is_call: true,
                            consume,
                            code: vec![],
                            recipient: Some(recipient),
                            code_pre: compile_commands(&t.code_pre, &resolve)?,
                            call: Some(
                                t.call
                                    .clone()
                                    .ok_or_else(|| invalid(format!("script {idx}: missing call")))?,
                            ),
                            code_post: compile_commands(&t.code_post, &resolve)?,
                            to_validators: t.to_validators.clone(),
                        }
                    }
                    other => return Err(invalid(format!("script {idx}: unknown kind {other}"))),
                };
                variants.push(template);
            }
            user.script.push(ScriptEntry {
                at: s.at_deltas * params.delta_bound,
                after_confirm: s.after_confirm,
                sn_override: s.sn,
                variants,
            });
        }

        let mut props = Vec::new();
        for name in &self.checks.props {
            props.push(
                PropertyId::parse(name).ok_or_else(|| invalid(format!("unknown property {name}")))?,
            );
        }

        Ok(Compiled {
            params,
            quorums,
            mode: self.run.mode,
            pre_gst_cap_deltas: self.run.pre_gst_cap_deltas,
            drop_probability_percent: self.run.drop_probability_percent,
            horizon: params.gst + self.run.horizon_deltas * params.delta_bound,
            byzantine,
            keys,
            users,
            reactive,
            props,
            explore: self.explore.clone(),
        })
    }
}

fn compile_commands(
    cfgs: &[CommandCfg],
    resolve: &impl Fn(&str) -> Result<ActorId, ScenarioError>,
) -> Result<Vec<Command>, ScenarioError> {
    let mut out = Vec::new();
    for cfg in cfgs {
        out.push(match cfg {
            CommandCfg::Split { object, parts } => Command::Split {
                object: ObjectId(object.clone()),
                parts: parts
                    .iter()
                    .map(|p| Ok(SplitPart { amount: p.amount, owner: resolve(&p.owner)? }))
                    .collect::<Result<Vec<_>, ScenarioError>>()?,
            },
            CommandCfg::Merge { objects } => Command::Merge {
                objects: objects.iter().map(|s| ObjectId(s.clone())).collect(),
            },
            CommandCfg::CreateObject { type_tag, payload, owner } => Command::CreateObject {
                type_tag: type_tag.clone(),
                payload: *payload,
                owner: resolve(owner)?,
            },
            CommandCfg::CreateReactiveActor { program, init } => {
                Command::CreateReactiveActor { program: program.clone(), init: *init }
            }
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CompiledUser {
    pub name: String,
    pub key: KeyPair,
    pub behavior: Behavior,
    pub genesis: Vec<OwnedObject>,
    pub local_validator: Option<u32>,
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone)]
pub struct CompiledRa {
    pub actor: ActorId,
    pub program: ProgramKind,
    pub state: ProgramState,
    pub genesis: Vec<OwnedObject>,
    pub leader_offset: u32,
    pub initiate_immediate: bool,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub params: SystemParams,
    pub quorums: Quorums,
    pub mode: DelayMode,
    pub pre_gst_cap_deltas: u64,
    pub drop_probability_percent: u32,
    pub horizon: SimTime,
    pub byzantine: BTreeMap<u32, ByzCfg>,
    pub keys: KeyStore,
    pub users: Vec<CompiledUser>,
    pub reactive: Vec<CompiledRa>,
    pub props: Vec<PropertyId>,
    pub explore: ExploreCfg,
}

impl Compiled {
    /// Total coin value at genesis, for conservation checks.
    pub fn genesis_coin_total(&self) -> u64 {
        let users: u64 = self
            .users
            .iter()
            .flat_map(|u| &u.genesis)
            .filter(|o| o.type_tag == COIN)
            .map(|o| o.payload)
            .sum();
        let ras: u64 = self
            .reactive
            .iter()
            .flat_map(|r| &r.genesis)
            .filter(|o| o.type_tag == COIN)
            .map(|o| o.payload)
            .sum();
        users + ras
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [params]
        n = 6
        f = 1
        p = 1

        [[users]]
        name = "alice"
        coins = [10]

        [[reactive]]
        name = "X"
        program = "counter"

        [[script]]
        at_deltas = 0
        user = "alice"
        [[script.tx]]
        kind = "ua_ra"
        recipient = "X"
        call = { function = "inc" }

        [checks]
        props = ["agreement", "no_conflict"]
    "#;

    #[test]
    fn minimal_scenario_compiles() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        let c = s.compile().unwrap();
        assert_eq!(c.params.n, 6);
        assert_eq!(c.users.len(), 1);
        assert_eq!(c.users[0].script.len(), 1);
        assert_eq!(c.reactive.len(), 1);
        assert_eq!(c.horizon, c.params.gst + 40 * 100);
    }

    #[test]
    fn rejects_too_many_byzantine() {
        let text = format!(
            "{MINIMAL}\n[[byzantine]]\nindex = 0\nstrategy = \"silent\"\n\n[[byzantine]]\nindex = 1\nstrategy = \"silent\"\n"
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        assert!(matches!(s.compile(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn rejects_honest_multi_variant_scripts() {
        let text = r#"
            [params]
            n = 4
            f = 1
            p = 0

            [[users]]
            name = "eve"
            coins = [5]

            [[script]]
            user = "eve"
            [[script.tx]]
            kind = "ua"
            [[script.tx]]
            kind = "ua"
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert!(s.compile().is_err());
    }

    #[test]
    fn unknown_property_rejected() {
        let text = MINIMAL.replace("no_conflict", "definitely_not_a_property");
        let s = Scenario::from_toml_str(&text).unwrap();
        assert!(s.compile().is_err());
    }
}
