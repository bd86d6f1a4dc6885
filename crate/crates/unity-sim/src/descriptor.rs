//! Descriptor parsing and validation: resource pools, deployment mode with
//! optional pin-map, elasticity thresholds, and cost/network overrides.
//!
//! The format is section-based plain text with `#` comments:
//!
//! ```text
//! [pool cu]
//! pouches = 8
//! max = 8
//! speed = 1.0
//!
//! [deployment]
//! mode = pinned
//! pin SIPh,NSS -> 1
//! pin C -> 3
//!
//! [elasticity]      # optional
//! cpu_high = 0.80
//! cpu_low = 0.30
//! cooldown_ms = 5000
//!
//! [costs]           # optional, per-operation overrides
//! c_setup_ms = 2.0
//!
//! [network]         # optional
//! inter_ms = 0.5
//! ```
//!
//! Six golden descriptors ship with the crate: `NO1`..`NO5` (the node-based
//! rows, one function class statically bound per pouch ordinal) and `DIST`
//! (free placement over a uniform pool).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kernel::{NetworkConfig, MIN_SPEED_MILLI};
use crate::unit::{UnitType, ALL_UNIT_TYPES};

/// One pool of identical pouches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSpec {
    pub id: String,
    /// Pouches created at deploy time.
    pub initial: u32,
    /// Elasticity ceiling.
    pub max: u32,
    /// Speed factor in milli-units of the reference pouch.
    pub speed_milli: u32,
}

/// Scale-out/scale-in policy knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElasticityConfig {
    /// Mean utilization above which a pouch is added (permille).
    pub cpu_high_milli: u32,
    /// Mean utilization below which an empty pouch is removed (permille).
    pub cpu_low_milli: u32,
    /// Minimum spacing between scale decisions.
    pub cooldown_us: u64,
}

impl Default for ElasticityConfig {
    fn default() -> Self {
        ElasticityConfig { cpu_high_milli: 800, cpu_low_milli: 300, cooldown_us: 5_000_000 }
    }
}

/// Per-operation CPU costs at reference speed, in microseconds, plus the two
/// scheduling knobs (contention factor, work-slicing quantum).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    /// SIP parse+route at the SIP handler, per message it receives.
    pub siph_route_us: u64,
    /// Session-control setup step, per call side.
    pub c_setup_us: u64,
    /// HSS-frontend profile query (cache miss).
    pub h_query_us: u64,
    /// HSS-frontend query answered from the per-pouch cache.
    pub h_cache_hit_us: u64,
    /// Diameter round trip to the subscriber database.
    pub diah_query_us: u64,
    /// Codec offer/answer negotiation.
    pub a_negotiate_us: u64,
    /// Telephony-logic event handling.
    pub t_event_us: u64,
    /// Media frame processing, per leg per 20 ms tick.
    pub m_frame_leg_us: u64,
    /// Unit instantiation, charged to the hosting pouch.
    pub spawn_us: u64,
    /// Teardown handling per session-control unit.
    pub bye_handle_us: u64,
    /// Extra session-control work per concurrently live C unit on the same
    /// pouch, in milli-units (600 = +60% per co-resident session): session
    /// state upkeep scales with how many sessions contend for the core.
    pub c_contention_milli: u64,
    /// Handler work is charged in slices of at most this quantum, so long
    /// jobs don't starve the pouch queue.
    pub cpu_quantum_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            siph_route_us: 1_000,
            c_setup_us: 2_000,
            h_query_us: 1_000,
            h_cache_hit_us: 100,
            diah_query_us: 1_500,
            a_negotiate_us: 500,
            t_event_us: 300,
            m_frame_leg_us: 100,
            spawn_us: 500,
            bye_handle_us: 500,
            c_contention_milli: 600,
            cpu_quantum_us: 500,
        }
    }
}

/// Pin-map: unit type → sorted 0-based pouch indices it may run on.
pub type PinMap = BTreeMap<UnitType, Vec<u32>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeploymentMode {
    Distributed,
    Pinned(PinMap),
}

impl DeploymentMode {
    pub fn is_pinned(&self) -> bool {
        matches!(self, DeploymentMode::Pinned(_))
    }

    /// Pouches eligible for a unit type, or `None` in distributed mode
    /// (everything is eligible).
    pub fn eligible(&self, t: UnitType) -> Option<&[u32]> {
        match self {
            DeploymentMode::Distributed => None,
            DeploymentMode::Pinned(map) => map.get(&t).map(Vec::as_slice),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub pools: Vec<PoolSpec>,
    pub mode: DeploymentMode,
    pub elasticity: ElasticityConfig,
    pub costs: CostModel,
    pub network: NetworkConfig,
}

impl Descriptor {
    pub fn total_initial_pouches(&self) -> u32 {
        self.pools.iter().map(|p| p.initial).sum()
    }

    /// Text of a built-in golden descriptor (`NO1`..`NO5`, `DIST`).
    pub fn golden(name: &str) -> Option<&'static str> {
        Some(match name {
            "NO1" => include_str!("../descriptors/NO1.desc"),
            "NO2" => include_str!("../descriptors/NO2.desc"),
            "NO3" => include_str!("../descriptors/NO3.desc"),
            "NO4" => include_str!("../descriptors/NO4.desc"),
            "NO5" => include_str!("../descriptors/NO5.desc"),
            "DIST" => include_str!("../descriptors/DIST.desc"),
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DescriptorError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown unit type {token:?}")]
    UnknownUnitType { line: usize, token: String },
    #[error("pinned mode leaves unit type {0} without a pouch")]
    UncoveredUnitType(UnitType),
    #[error("pool {pool:?}: initial pouch count {initial} exceeds max {max}")]
    PoolBounds { pool: String, initial: u32, max: u32 },
    #[error("line {line}: pin ordinal {ordinal} outside 1..={total}")]
    PinOutOfRange { line: usize, ordinal: u32, total: u32 },
    #[error("line {line}: {unit} already pinned to pouch ordinal {ordinal}")]
    DuplicatePin { line: usize, unit: UnitType, ordinal: u32 },
}

fn syntax(line: usize, msg: impl Into<String>) -> DescriptorError {
    DescriptorError::Syntax { line, msg: msg.into() }
}

/// Parse `"1.5"`-style milliseconds into microseconds.
fn parse_ms_to_us(line: usize, value: &str) -> Result<u64, DescriptorError> {
    let x: f64 = value
        .parse()
        .map_err(|_| syntax(line, format!("expected a number, got {value:?}")))?;
    if !x.is_finite() || x < 0.0 {
        return Err(syntax(line, format!("duration must be finite and >= 0, got {value}")));
    }
    Ok((x * 1_000.0).round() as u64)
}

/// Parse a dimensionless factor (speed, threshold) into milli-units.
fn parse_milli(line: usize, value: &str) -> Result<u32, DescriptorError> {
    let x: f64 = value
        .parse()
        .map_err(|_| syntax(line, format!("expected a number, got {value:?}")))?;
    if !x.is_finite() || x < 0.0 || x > 4_000_000.0 {
        return Err(syntax(line, format!("factor out of range: {value}")));
    }
    Ok((x * 1_000.0).round() as u32)
}

fn parse_int(line: usize, value: &str) -> Result<u32, DescriptorError> {
    value
        .parse()
        .map_err(|_| syntax(line, format!("expected an integer, got {value:?}")))
}

#[derive(Debug, PartialEq)]
enum Section {
    None,
    Pool(usize),
    Deployment,
    Elasticity,
    Costs,
    Network,
}

struct PendingPin {
    line: usize,
    unit: UnitType,
    ordinal: u32,
}

pub fn parse_descriptor(text: &str) -> Result<Descriptor, DescriptorError> {
    let mut pools: Vec<PoolSpec> = Vec::new();
    let mut mode: Option<(usize, bool)> = None; // (line, is_pinned)
    let mut pins: Vec<PendingPin> = Vec::new();
    let mut elasticity = ElasticityConfig::default();
    let mut costs = CostModel::default();
    let mut cache_hit_explicit = false;
    let mut network = NetworkConfig::default();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }

        if let Some(header) = content.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unclosed section header"))?
                .trim();
            section = if let Some(rest) = header.strip_prefix("pool") {
                let id = rest.trim();
                if id.is_empty() {
                    return Err(syntax(line, "pool section needs a name: [pool <id>]"));
                }
                if pools.iter().any(|p| p.id == id) {
                    return Err(syntax(line, format!("duplicate pool {id:?}")));
                }
                pools.push(PoolSpec {
                    id: id.to_string(),
                    initial: 0,
                    max: 0,
                    speed_milli: 1_000,
                });
                Section::Pool(pools.len() - 1)
            } else {
                match header {
                    "deployment" => Section::Deployment,
                    "elasticity" => Section::Elasticity,
                    "costs" => Section::Costs,
                    "network" => Section::Network,
                    other => return Err(syntax(line, format!("unknown section [{other}]"))),
                }
            };
            continue;
        }

        // `pin <TypeList> -> <ordinal>` lines, deployment section only.
        if let Some(rest) = content.strip_prefix("pin ") {
            if section != Section::Deployment {
                return Err(syntax(line, "pin line outside [deployment]"));
            }
            let (types, ordinal) = rest
                .split_once("->")
                .ok_or_else(|| syntax(line, "pin line needs `-> <pouch-ordinal>`"))?;
            let ordinal = parse_int(line, ordinal.trim())?;
            for tok in types.split(',') {
                let tok = tok.trim();
                let unit = UnitType::from_token(tok).ok_or_else(|| {
                    DescriptorError::UnknownUnitType { line, token: tok.to_string() }
                })?;
                pins.push(PendingPin { line, unit, ordinal });
            }
            continue;
        }

        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();

        match section {
            Section::None => return Err(syntax(line, "key outside any section")),
            Section::Pool(i) => {
                let pool = &mut pools[i];
                match key {
                    "pouches" => pool.initial = parse_int(line, value)?,
                    "max" => pool.max = parse_int(line, value)?,
                    "speed" => {
                        let milli = parse_milli(line, value)?;
                        if milli < MIN_SPEED_MILLI {
                            return Err(syntax(
                                line,
                                format!("speed {value} below the 0.1 minimum"),
                            ));
                        }
                        pool.speed_milli = milli;
                    }
                    other => return Err(syntax(line, format!("unknown pool key {other:?}"))),
                }
            }
            Section::Deployment => match key {
                "mode" => {
                    let pinned = match value {
                        "pinned" => true,
                        "distributed" => false,
                        other => {
                            return Err(syntax(line, format!("unknown mode {other:?}")))
                        }
                    };
                    mode = Some((line, pinned));
                }
                other => return Err(syntax(line, format!("unknown deployment key {other:?}"))),
            },
            Section::Elasticity => match key {
                "cpu_high" => elasticity.cpu_high_milli = parse_milli(line, value)?,
                "cpu_low" => elasticity.cpu_low_milli = parse_milli(line, value)?,
                "cooldown_ms" => elasticity.cooldown_us = parse_ms_to_us(line, value)?,
                other => return Err(syntax(line, format!("unknown elasticity key {other:?}"))),
            },
            Section::Costs => match key {
                "siph_route_ms" => costs.siph_route_us = parse_ms_to_us(line, value)?,
                "c_setup_ms" => costs.c_setup_us = parse_ms_to_us(line, value)?,
                "h_query_ms" => costs.h_query_us = parse_ms_to_us(line, value)?,
                "h_cache_hit_ms" => {
                    costs.h_cache_hit_us = parse_ms_to_us(line, value)?;
                    cache_hit_explicit = true;
                }
                "diah_query_ms" => costs.diah_query_us = parse_ms_to_us(line, value)?,
                "a_negotiate_ms" => costs.a_negotiate_us = parse_ms_to_us(line, value)?,
                "t_event_ms" => costs.t_event_us = parse_ms_to_us(line, value)?,
                "m_frame_leg_ms" => costs.m_frame_leg_us = parse_ms_to_us(line, value)?,
                "spawn_ms" => costs.spawn_us = parse_ms_to_us(line, value)?,
                "bye_handle_ms" => costs.bye_handle_us = parse_ms_to_us(line, value)?,
                "c_contention" => costs.c_contention_milli = u64::from(parse_milli(line, value)?),
                "cpu_quantum_ms" => {
                    costs.cpu_quantum_us = parse_ms_to_us(line, value)?;
                    if costs.cpu_quantum_us == 0 {
                        return Err(syntax(line, "cpu_quantum_ms must be positive"));
                    }
                }
                other => return Err(syntax(line, format!("unknown cost key {other:?}"))),
            },
            Section::Network => match key {
                "intra_ms" => network.intra_pouch_us = parse_ms_to_us(line, value)?,
                "inter_ms" => network.inter_pouch_us = parse_ms_to_us(line, value)?,
                "ua_ms" => network.ua_us = parse_ms_to_us(line, value)?,
                other => return Err(syntax(line, format!("unknown network key {other:?}"))),
            },
        }
    }

    // A cache hit tracks the query cost unless pinned down explicitly.
    if !cache_hit_explicit {
        costs.h_cache_hit_us = costs.h_query_us / 10;
    }

    if pools.is_empty() {
        return Err(syntax(0, "no [pool] section"));
    }
    for pool in &mut pools {
        if pool.initial == 0 {
            return Err(syntax(0, format!("pool {:?} needs pouches >= 1", pool.id)));
        }
        if pool.max == 0 {
            pool.max = pool.initial;
        }
        if pool.initial > pool.max {
            return Err(DescriptorError::PoolBounds {
                pool: pool.id.clone(),
                initial: pool.initial,
                max: pool.max,
            });
        }
    }
    let total: u32 = pools.iter().map(|p| p.initial).sum();

    let (_, pinned) = mode.ok_or_else(|| syntax(0, "missing [deployment] mode"))?;
    let mode = if pinned {
        let mut map: PinMap = BTreeMap::new();
        for pin in &pins {
            if pin.ordinal == 0 || pin.ordinal > total {
                return Err(DescriptorError::PinOutOfRange {
                    line: pin.line,
                    ordinal: pin.ordinal,
                    total,
                });
            }
            let slots = map.entry(pin.unit).or_default();
            let index = pin.ordinal - 1;
            if slots.contains(&index) {
                return Err(DescriptorError::DuplicatePin {
                    line: pin.line,
                    unit: pin.unit,
                    ordinal: pin.ordinal,
                });
            }
            slots.push(index);
        }
        for t in ALL_UNIT_TYPES {
            match map.get_mut(&t) {
                Some(slots) => slots.sort_unstable(),
                None => return Err(DescriptorError::UncoveredUnitType(t)),
            }
        }
        DeploymentMode::Pinned(map)
    } else {
        if let Some(pin) = pins.first() {
            return Err(syntax(pin.line, "pin lines require mode = pinned"));
        }
        DeploymentMode::Distributed
    };

    Ok(Descriptor { pools, mode, elasticity, costs, network })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pin_map(entries: &[(UnitType, &[u32])]) -> PinMap {
        entries.iter().map(|&(t, s)| (t, s.to_vec())).collect()
    }

    fn golden(name: &str) -> Descriptor {
        parse_descriptor(Descriptor::golden(name).unwrap()).unwrap()
    }

    /// The five node-based pin-maps, frozen by hand from the configuration
    /// matrix (pouch ordinals 1..8 → indices 0..7).
    fn expected_pin_maps() -> Vec<(&'static str, PinMap)> {
        use UnitType::*;
        vec![
            (
                "NO1",
                pin_map(&[
                    (SipH, &[0]),
                    (Nss, &[0]),
                    (H, &[1]),
                    (Diah, &[1]),
                    (C, &[2, 3]),
                    (A, &[4]),
                    (T, &[5]),
                    (M, &[6, 7]),
                ]),
            ),
            (
                "NO2",
                pin_map(&[
                    (SipH, &[0]),
                    (Nss, &[0]),
                    (H, &[0]),
                    (Diah, &[0]),
                    (C, &[1, 2]),
                    (A, &[3]),
                    (T, &[4]),
                    (M, &[5, 6, 7]),
                ]),
            ),
            (
                "NO3",
                pin_map(&[
                    (SipH, &[0]),
                    (Nss, &[0]),
                    (H, &[1]),
                    (Diah, &[1]),
                    (C, &[2]),
                    (A, &[3]),
                    (T, &[4]),
                    (M, &[5, 6, 7]),
                ]),
            ),
            (
                "NO4",
                pin_map(&[
                    (SipH, &[0]),
                    (Nss, &[0]),
                    (H, &[1]),
                    (Diah, &[1]),
                    (C, &[2, 3]),
                    (T, &[4]),
                    (M, &[5, 6, 7]),
                    (A, &[5, 6, 7]),
                ]),
            ),
            (
                "NO5",
                pin_map(&[
                    (SipH, &[0]),
                    (Nss, &[0]),
                    (H, &[0]),
                    (Diah, &[0]),
                    (C, &[1, 2]),
                    (T, &[3]),
                    (M, &[4, 5, 6, 7]),
                    (A, &[4, 5, 6, 7]),
                ]),
            ),
        ]
    }

    #[test]
    fn golden_node_configs_match_frozen_pin_maps() {
        for (name, expected) in expected_pin_maps() {
            let d = golden(name);
            assert_eq!(d.pools.len(), 1, "{name}");
            assert_eq!(d.pools[0].initial, 8, "{name}");
            assert_eq!(d.pools[0].speed_milli, 1_000, "{name}");
            match &d.mode {
                DeploymentMode::Pinned(map) => assert_eq!(map, &expected, "{name}"),
                DeploymentMode::Distributed => panic!("{name} must be pinned"),
            }
        }
    }

    #[test]
    fn golden_dist_is_distributed_with_uniform_pool() {
        let d = golden("DIST");
        assert_eq!(d.mode, DeploymentMode::Distributed);
        assert_eq!(d.pools.len(), 1);
        assert_eq!(d.pools[0].initial, 8);
        assert_eq!(d.pools[0].max, 8);
        assert_eq!(d.pools[0].speed_milli, 1_000);
    }

    #[test]
    fn golden_names_are_closed() {
        assert!(Descriptor::golden("NO6").is_none());
        assert!(Descriptor::golden("dist").is_none());
    }

    #[test]
    fn defaults_fill_omitted_sections() {
        let d = parse_descriptor(
            "[pool a]\npouches = 2\n\n[deployment]\nmode = distributed\n",
        )
        .unwrap();
        assert_eq!(d.pools[0].max, 2); // max defaults to initial
        assert_eq!(d.pools[0].speed_milli, 1_000);
        assert_eq!(d.elasticity, ElasticityConfig::default());
        assert_eq!(d.costs, CostModel::default());
        assert_eq!(d.network, NetworkConfig::default());
    }

    #[test]
    fn overrides_are_applied() {
        let text = "\
[pool fast]
pouches = 4
max = 12
speed = 2.0

[pool slow]
pouches = 4
speed = 0.5

[deployment]
mode = distributed

[elasticity]
cpu_high = 0.9
cpu_low = 0.2
cooldown_ms = 2500

[costs]
c_setup_ms = 3.5
c_contention = 0.25
cpu_quantum_ms = 1.0

[network]
inter_ms = 0.25
ua_ms = 2
";
        let d = parse_descriptor(text).unwrap();
        assert_eq!(d.pools[0].speed_milli, 2_000);
        assert_eq!(d.pools[1].speed_milli, 500);
        assert_eq!(d.total_initial_pouches(), 8);
        assert_eq!(d.elasticity.cpu_high_milli, 900);
        assert_eq!(d.elasticity.cooldown_us, 2_500_000);
        assert_eq!(d.costs.c_setup_us, 3_500);
        assert_eq!(d.costs.c_contention_milli, 250);
        assert_eq!(d.costs.cpu_quantum_us, 1_000);
        assert_eq!(d.network.inter_pouch_us, 250);
        assert_eq!(d.network.ua_us, 2_000);
        // Untouched keys keep their defaults.
        assert_eq!(d.costs.siph_route_us, 1_000);
        assert_eq!(d.network.intra_pouch_us, 0);
    }

    #[test]
    fn cache_hit_tracks_query_cost_unless_explicit() {
        let base = "[pool a]\npouches = 1\n[deployment]\nmode = distributed\n";
        let d =
            parse_descriptor(&format!("{base}[costs]\nh_query_ms = 2.0\n")).unwrap();
        assert_eq!(d.costs.h_cache_hit_us, 200);
        let d = parse_descriptor(&format!(
            "{base}[costs]\nh_query_ms = 2.0\nh_cache_hit_ms = 0.05\n"
        ))
        .unwrap();
        assert_eq!(d.costs.h_cache_hit_us, 50);
    }

    #[test]
    fn pinned_mode_must_cover_every_type() {
        let text = "\
[pool cu]
pouches = 8

[deployment]
mode = pinned
pin SIPh,NSS -> 1
pin H,Diah -> 2
pin C -> 3
pin A -> 4
pin T -> 5
";
        assert_eq!(
            parse_descriptor(text),
            Err(DescriptorError::UncoveredUnitType(UnitType::M))
        );
    }

    #[test]
    fn pin_bounds_and_duplicates_are_rejected() {
        let base = "[pool cu]\npouches = 4\n\n[deployment]\nmode = pinned\n";
        let e = parse_descriptor(&format!("{base}pin C -> 5\n")).unwrap_err();
        assert_eq!(
            e,
            DescriptorError::PinOutOfRange { line: 6, ordinal: 5, total: 4 }
        );
        let e = parse_descriptor(&format!("{base}pin C -> 2\npin C -> 2\n")).unwrap_err();
        assert_eq!(
            e,
            DescriptorError::DuplicatePin { line: 7, unit: UnitType::C, ordinal: 2 }
        );
    }

    #[test]
    fn unknown_unit_type_is_rejected() {
        let text = "[pool cu]\npouches = 2\n[deployment]\nmode = pinned\npin X -> 1\n";
        assert_eq!(
            parse_descriptor(text),
            Err(DescriptorError::UnknownUnitType { line: 5, token: "X".into() })
        );
    }

    #[test]
    fn pool_bounds_are_validated() {
        let text = "[pool cu]\npouches = 8\nmax = 4\n[deployment]\nmode = distributed\n";
        assert_eq!(
            parse_descriptor(text),
            Err(DescriptorError::PoolBounds { pool: "cu".into(), initial: 8, max: 4 })
        );
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "[pool cu]\npouches = 8\nwhat is this\n";
        match parse_descriptor(text) {
            Err(DescriptorError::Syntax { line: 3, .. }) => {}
            other => panic!("expected syntax error on line 3, got {other:?}"),
        }
        assert!(parse_descriptor("[pool cu]\npouches = 8\n[deployment]\nmode = serverless\n").is_err());
        assert!(parse_descriptor("speed = 1.0\n").is_err());
        assert!(parse_descriptor("[pool cu]\npouches = 8\nspeed = 0.01\n").is_err());
    }

    #[test]
    fn pins_in_distributed_mode_are_rejected() {
        let text = "[pool cu]\npouches = 8\n[deployment]\nmode = distributed\npin C -> 1\n";
        assert!(matches!(
            parse_descriptor(text),
            Err(DescriptorError::Syntax { line: 5, .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\
# full-line comment
[pool cu]   # trailing comment
pouches = 2  # two pouches

[deployment]
mode = distributed
";
        let d = parse_descriptor(text).unwrap();
        assert_eq!(d.pools[0].initial, 2);
    }
}
