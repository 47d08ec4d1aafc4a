//! Scenario files: who takes part, with which inputs, and how each actor
//! behaves.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use primitive_types::U256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{ContractPolicy, FunctionPolicy};
use crate::crypto::Address;
use crate::enclave::{param_roles, supplied_type, ParamRole, SettlementPolicy};
use crate::frontend::DataType;
use crate::interpreter::{CellId, Value};
use crate::typecheck::FunctionKind;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("contract does not compile: {0}")]
    Compile(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyBehavior {
    #[default]
    Honest,
    /// Acknowledges, then goes quiet: no inputs, no response, no claims.
    SilentAfterAck,
    /// Sends inputs that do not open its commitment, and answers a
    /// challenge with the same wrong inputs.
    MismatchedInputs,
    /// Withholds inputs off-chain but answers the challenge correctly.
    RespondToChallenge,
    /// Withholds inputs and ignores the challenge, but still claims a
    /// timeout if one arises.
    NeverRespond,
}

impl PartyBehavior {
    pub const ALL: [PartyBehavior; 5] = [
        PartyBehavior::Honest,
        PartyBehavior::SilentAfterAck,
        PartyBehavior::MismatchedInputs,
        PartyBehavior::RespondToChallenge,
        PartyBehavior::NeverRespond,
    ];

    pub fn sends_inputs(self) -> bool {
        matches!(self, PartyBehavior::Honest | PartyBehavior::MismatchedInputs)
    }

    pub fn responds(self) -> bool {
        matches!(
            self,
            PartyBehavior::Honest | PartyBehavior::MismatchedInputs | PartyBehavior::RespondToChallenge
        )
    }

    pub fn claims_timeout(self) -> bool {
        self != PartyBehavior::SilentAfterAck
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecutorBehavior {
    #[default]
    Honest,
    /// Withholds the enclave's `TX_com` and `TX_pns`.
    DropTxCom,
    /// Stops relaying right after `TX_p` is published.
    CrashAfterSettle,
    /// Publishes the enclave's final transaction only after `τ_com`.
    DelayBeyondTauCom,
}

impl ExecutorBehavior {
    pub const ALL: [ExecutorBehavior; 4] = [
        ExecutorBehavior::Honest,
        ExecutorBehavior::DropTxCom,
        ExecutorBehavior::CrashAfterSettle,
        ExecutorBehavior::DelayBeyondTauCom,
    ];
}

/// Per-phase delays in blocks, counted from the start of the phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Delays {
    #[serde(default)]
    pub ack: u64,
    #[serde(default)]
    pub inputs: u64,
}

/// A value as written in a scenario. Addresses may be given as `"self"`,
/// `{"party": i}` or hex; large integers as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Bool(bool),
    Uint(u64),
    Party { party: usize },
    Text(String),
    List(Vec<ParamSpec>),
}

impl ParamSpec {
    pub fn resolve(&self, ty: &DataType, me: Address, parties: &[Address]) -> Result<Value, String> {
        let bad = || format!("{self:?} is not a valid {}", type_name(ty));
        match (ty, self) {
            (DataType::Bool, ParamSpec::Bool(b)) => Ok(Value::Bool(*b)),
            (DataType::Uint256, ParamSpec::Uint(n)) => Ok(Value::uint(*n)),
            (DataType::Uint256, ParamSpec::Text(s)) => U256::from_dec_str(s).map(Value::Uint).map_err(|_| bad()),
            (DataType::Address, ParamSpec::Party { party }) => parties
                .get(*party)
                .map(|a| Value::Address(*a))
                .ok_or_else(|| format!("no party {party}")),
            (DataType::Address, ParamSpec::Text(s)) if s == "self" => Ok(Value::Address(me)),
            (DataType::Address, ParamSpec::Text(s)) => s.parse().map(Value::Address).map_err(|_| bad()),
            (DataType::Bin, ParamSpec::Text(s)) => {
                hex::decode(s.strip_prefix("0x").unwrap_or(s)).map(Value::Bin).map_err(|_| bad())
            }
            (DataType::Array { elem }, ParamSpec::List(xs)) => xs
                .iter()
                .map(|x| x.resolve(&elem.data, me, parties))
                .collect::<Result<_, _>>()
                .map(Value::Array),
            _ => Err(bad()),
        }
    }
}

fn type_name(ty: &DataType) -> &'static str {
    match ty {
        DataType::Bool => "bool",
        DataType::Uint256 => "uint",
        DataType::Address => "address",
        DataType::Bin => "bin",
        DataType::Array { .. } | DataType::NamedAddressArray { .. } => "array",
        DataType::Mapping { .. } | DataType::NamedMapping { .. } => "mapping",
    }
}

fn default_deposit() -> u64 {
    1000
}

fn default_t_n() -> u64 {
    5
}

fn default_t_e() -> u64 {
    10
}

fn default_rounds() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartyConfig {
    /// Key seed; also the party's identity across runs.
    pub seed: u64,
    #[serde(default)]
    pub params: BTreeMap<String, ParamSpec>,
    /// Initial private state. Mapping entries are keyed by the party's own
    /// address.
    #[serde(default)]
    pub state: BTreeMap<String, ParamSpec>,
    #[serde(default)]
    pub behavior: PartyBehavior,
    #[serde(default = "default_deposit")]
    pub deposit: u64,
    #[serde(default)]
    pub delays: Delays,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Contract source, relative to the scenario file.
    pub contract: PathBuf,
    pub function: String,
    pub parties: Vec<PartyConfig>,
    #[serde(default)]
    pub proposer: usize,
    pub q: u64,
    /// Blocks from the proposal until negotiation closes.
    #[serde(default = "default_t_n")]
    pub t_n: u64,
    /// Blocks after `TX_p` during which inputs are accepted.
    #[serde(default = "default_t_e")]
    pub t_e: u64,
    #[serde(default)]
    pub executor: ExecutorBehavior,
    #[serde(default = "default_deposit")]
    pub executor_deposit: u64,
    #[serde(default)]
    pub seed: u64,
    /// Seed for the enclave's keys and windows. Kept apart from `seed` so
    /// changing `seed` leaves every deadline where it was.
    #[serde(default)]
    pub enclave_seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Initial values of public scalar state variables.
    #[serde(default)]
    pub public_state: BTreeMap<String, ParamSpec>,
    #[serde(default)]
    pub settlement: SettlementPolicy,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Read a scenario file and its contract, resolving the contract path
    /// against the scenario's directory.
    pub fn load(path: &Path) -> Result<(Self, String), ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_json(&text)?;
        let contract = path.parent().unwrap_or(Path::new(".")).join(&cfg.contract);
        let source = fs::read_to_string(&contract).map_err(|source| ScenarioError::Io {
            path: contract.clone(),
            source,
        })?;
        Ok((cfg, source))
    }

    /// Structural checks that need the compiled policy. Returns the
    /// resolved parameters and initial cells of every party.
    pub fn resolve(&self, policy: &ContractPolicy, addrs: &[Address]) -> Result<Vec<ResolvedParty>, ScenarioError> {
        let invalid = |m: String| ScenarioError::Invalid(m);
        if self.parties.is_empty() {
            return Err(invalid("no parties".into()));
        }
        if self.proposer >= self.parties.len() {
            return Err(invalid(format!("proposer {} out of range", self.proposer)));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1".into()));
        }
        let seeds: BTreeSet<u64> = self.parties.iter().map(|p| p.seed).collect();
        if seeds.len() != self.parties.len() {
            return Err(invalid("party seeds must be distinct".into()));
        }
        let fp = policy
            .function(&self.function)
            .ok_or_else(|| invalid(format!("no function '{}'", self.function)))?;
        if fp.kind != FunctionKind::Mpt {
            return Err(invalid(format!("'{}' is not an MPT", self.function)));
        }
        for p in &self.parties {
            if p.deposit < self.q {
                return Err(invalid(format!("party {} deposit does not cover q", p.seed)));
            }
        }
        if self.executor_deposit < self.q {
            return Err(invalid("executor deposit does not cover q".into()));
        }
        self.parties
            .iter()
            .enumerate()
            .map(|(i, p)| resolve_party(fp, policy, p, addrs[i], addrs).map_err(|m| invalid(format!("party {i}: {m}"))))
            .collect()
    }

    pub fn public_cells(&self, policy: &ContractPolicy, addrs: &[Address]) -> Result<Vec<(CellId, Value)>, ScenarioError> {
        self.public_state
            .iter()
            .map(|(var, spec)| {
                let dp = policy
                    .state(var)
                    .ok_or_else(|| ScenarioError::Invalid(format!("no state variable '{var}'")))?;
                if !dp.ty.owner.is_all() || !dp.ty.data.is_primitive() {
                    return Err(ScenarioError::Invalid(format!("'{var}' is not a public scalar")));
                }
                let v = spec
                    .resolve(&dp.ty.data, Address::ZERO, addrs)
                    .map_err(ScenarioError::Invalid)?;
                Ok((CellId::scalar(var), v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedParty {
    pub params: BTreeMap<String, Value>,
    pub cells: Vec<(CellId, Value)>,
}

fn resolve_party(
    fp: &FunctionPolicy,
    policy: &ContractPolicy,
    p: &PartyConfig,
    me: Address,
    addrs: &[Address],
) -> Result<ResolvedParty, String> {
    let roles: BTreeMap<String, ParamRole> = param_roles(fp).into_iter().collect();
    let mut params = BTreeMap::new();
    for (name, spec) in &p.params {
        match roles.get(name) {
            None => return Err(format!("'{}' has no parameter '{name}'", fp.id)),
            Some(ParamRole::PartyList { .. }) => {
                return Err(format!("'{name}' is assembled at settlement and cannot be supplied"))
            }
            Some(_) => {}
        }
        let ty = supplied_type(fp, name).expect("role implies parameter");
        params.insert(name.clone(), spec.resolve(&ty, me, addrs)?);
    }
    let mut cells = Vec::new();
    for (var, spec) in &p.state {
        let dp = policy.state(var).ok_or_else(|| format!("no state variable '{var}'"))?;
        let (cell, ty) = match &dp.ty.data {
            DataType::NamedMapping { value, .. } => (CellId::entry(var, Value::Address(me)), &value.data),
            DataType::Mapping { key, value } if **key == DataType::Address => {
                (CellId::entry(var, Value::Address(me)), &value.data)
            }
            DataType::Mapping { .. } => return Err(format!("'{var}' is not keyed by address")),
            d => (CellId::scalar(var), d),
        };
        cells.push((cell, spec.resolve(ty, me, addrs)?));
    }
    Ok(ResolvedParty { params, cells })
}
