//! Subscriber database backing the Diameter agent.
//!
//! The HSS itself is not a simulated unit: `Diah` fronts it, and the
//! `diah_query` cost already includes the database round trip.  What lives
//! here is the record store, the provisioning-file format and the built-in
//! generator used by the traffic harness.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kernel::UaId;

/// Service flags a subscriber may be provisioned with.
pub const FLAG_MMTEL: &str = "MMTEL";
pub const FLAG_ADHOC_CONF: &str = "ADHOC-CONF";

/// One subscriber record as returned by a profile fetch.
///
/// Cheap to clone on purpose: fetch results are cached per pouch and carried
/// inside reply messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    /// Public identity, e.g. `sip:user0001@unity`.
    pub impu: String,
    /// Bare subscriber id, e.g. `user0001` (placement hash input).
    pub subscriber_id: String,
    pub mmtel: bool,
    pub adhoc_conf: bool,
    /// Whether a REGISTER binding is currently active.
    pub registered: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProvisionError {
    #[error("line {line}: expected `impu<TAB>flags`")]
    Syntax { line: usize },
    #[error("line {line}: unknown service flag `{flag}`")]
    UnknownFlag { line: usize, flag: String },
    #[error("line {line}: duplicate impu `{impu}`")]
    Duplicate { line: usize, impu: String },
}

/// Subscriber store plus registrar bindings.
#[derive(Debug, Default)]
pub struct Hss {
    records: BTreeMap<String, Profile>,
    bindings: BTreeMap<String, UaId>,
}

impl Hss {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads records from provisioning text, one `impu<TAB>flags` line each.
    /// Flags are comma separated; blank lines and `#` comments are skipped.
    pub fn load(text: &str) -> Result<Self, ProvisionError> {
        let mut hss = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (impu, flags) = trimmed
                .split_once('\t')
                .ok_or(ProvisionError::Syntax { line })?;
            let impu = impu.trim();
            if impu.is_empty() {
                return Err(ProvisionError::Syntax { line });
            }
            let mut mmtel = false;
            let mut adhoc = false;
            for flag in flags.split(',').map(str::trim).filter(|f| !f.is_empty()) {
                match flag {
                    FLAG_MMTEL => mmtel = true,
                    FLAG_ADHOC_CONF => adhoc = true,
                    other => {
                        return Err(ProvisionError::UnknownFlag {
                            line,
                            flag: other.to_string(),
                        })
                    }
                }
            }
            let profile = Profile {
                impu: impu.to_string(),
                subscriber_id: bare_id(impu).to_string(),
                mmtel,
                adhoc_conf: adhoc,
                registered: false,
            };
            if hss.records.insert(impu.to_string(), profile).is_some() {
                return Err(ProvisionError::Duplicate {
                    line,
                    impu: impu.to_string(),
                });
            }
        }
        Ok(hss)
    }

    /// Built-in population: `user0001..userNNNN`, everyone MMTEL, every
    /// tenth subscriber additionally ADHOC-CONF.
    pub fn generate(count: u32) -> Self {
        let mut hss = Self::new();
        for n in 1..=count {
            let sub = format!("user{n:04}");
            let impu = impu_of(&sub);
            let profile = Profile {
                impu: impu.clone(),
                subscriber_id: sub,
                mmtel: true,
                adhoc_conf: n % 10 == 0,
                registered: false,
            };
            hss.records.insert(impu, profile);
        }
        hss
    }

    /// Renders the store back into provisioning-file form.
    pub fn to_provisioning(&self) -> String {
        let mut out = String::new();
        for p in self.records.values() {
            let mut flags = Vec::new();
            if p.mmtel {
                flags.push(FLAG_MMTEL);
            }
            if p.adhoc_conf {
                flags.push(FLAG_ADHOC_CONF);
            }
            out.push_str(&format!("{}\t{}\n", p.impu, flags.join(",")));
        }
        out
    }

    pub fn lookup(&self, impu: &str) -> Option<&Profile> {
        self.records.get(impu)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Stores a registration binding and flips the registered flag.
    /// Returns false when the impu is not provisioned.
    pub fn bind(&mut self, impu: &str, ua: UaId) -> bool {
        match self.records.get_mut(impu) {
            Some(p) => {
                p.registered = true;
                self.bindings.insert(impu.to_string(), ua);
                true
            }
            None => false,
        }
    }

    pub fn binding(&self, impu: &str) -> Option<UaId> {
        self.bindings.get(impu).copied()
    }
}

/// `sip:user0001@unity` for `user0001`.
pub fn impu_of(subscriber_id: &str) -> String {
    format!("sip:{subscriber_id}@unity")
}

/// Strips the `sip:` scheme and domain, leaving the bare subscriber id.
pub fn bare_id(impu: &str) -> &str {
    let no_scheme = impu.strip_prefix("sip:").unwrap_or(impu);
    no_scheme.split('@').next().unwrap_or(no_scheme)
}
