//! Seeded synthetic measurement worlds.
//!
//! Probes cycle through the domain list in time order so every domain keeps
//! answering in every probing period. Each document carries the [`Intent`] it
//! was authored with, from which the expected curation outcome follows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{
    BlockingVerdict, ControlQuery, DnsConsistency, Platform, RawOoniMeasurement, RawSatelliteProbe,
    SatelliteAnswer, TestAttempt,
};
use crate::pipeline::PathsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// China and US vantage points, a GFWatch-listed share of domains
    /// answered with injected addresses, plus platform noise and invalid
    /// probes.
    #[default]
    Censorship,
    /// US vantage points only, every probe clean, drawn from four discrete
    /// Satellite response patterns.
    CleanControl,
}

/// An address the censor injects, and which published lists know it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeIp {
    pub ip: IpAddr,
    pub weight: u32,
    pub known_to_ooni: bool,
    pub known_to_gfwatch: bool,
}

impl FakeIp {
    pub fn new(ip: &str, weight: u32, known_to_ooni: bool, known_to_gfwatch: bool) -> Self {
        FakeIp {
            ip: ip.parse().expect("literal IP"),
            weight,
            known_to_ooni,
            known_to_gfwatch,
        }
    }
}

pub fn default_fake_ips() -> Vec<FakeIp> {
    vec![
        FakeIp::new("199.19.54.1", 3, false, false),
        FakeIp::new("203.98.7.65", 2, false, true),
        FakeIp::new("31.13.94.41", 2, true, true),
        FakeIp::new("108.160.166.137", 1, true, true),
        FakeIp::new("69.171.229.11", 1, true, false),
        FakeIp::new("93.46.8.90", 1, false, true),
        FakeIp::new("243.185.187.39", 1, false, false),
        FakeIp::new("46.82.174.68", 1, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub platform: Platform,
    pub scenario: Scenario,
    pub records: usize,
    pub domains: usize,
    pub start: NaiveDate,
    pub months: u32,
    /// Share of domains on the GFWatch list.
    pub listed_share: f64,
    /// Share of China probes (the rest come from the US).
    pub china_share: f64,
    /// Censored probes whose injection misses and the real answer arrives.
    pub injection_failure: f64,
    pub platform_false_positive: f64,
    pub invalid_share: f64,
    pub localized_share: f64,
    pub fake_ips: Vec<FakeIp>,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            platform: Platform::Satellite,
            scenario: Scenario::Censorship,
            records: 10_000,
            domains: 40,
            start: NaiveDate::from_ymd_opt(2021, 7, 1).expect("valid date"),
            months: 3,
            listed_share: 0.3,
            china_share: 0.8,
            injection_failure: 0.02,
            platform_false_positive: 0.02,
            invalid_share: 0.03,
            localized_share: 0.005,
            fake_ips: default_fake_ips(),
            seed: 0,
        }
    }
}

/// What a generated probe was meant to look like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Clean,
    /// Answered with an injected address.
    Censored,
    /// GFWatch-listed but the real answer came back.
    InjectionFailure,
    /// Flagged by the platform although nothing interfered.
    PlatformFalsePositive,
    /// Terminal control query failed.
    EndControlFailed,
    /// Domain does not exist.
    Nxdomain,
    /// Answered by a web-application firewall on the localized list.
    Localized,
    ControlFailed,
    OffControlGroup,
    NonDnsVerdict,
    InvalidAsn,
    /// Probed too rarely in its period to count as active.
    InactiveDomain,
}

impl Intent {
    pub fn is_valid(self) -> bool {
        !matches!(
            self,
            Intent::ControlFailed
                | Intent::OffControlGroup
                | Intent::NonDnsVerdict
                | Intent::InvalidAsn
                | Intent::InactiveDomain
        )
    }

    /// Curated class of a valid, non-localized probe.
    pub fn is_clean(self) -> bool {
        self == Intent::Clean
    }

    /// Ground truth of interference.
    pub fn censored(self) -> bool {
        matches!(self, Intent::Censored | Intent::InjectionFailure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub document: String,
    pub country: String,
    pub domain: String,
    pub time: DateTime<Utc>,
    pub intent: Intent,
}

/// Curation outcome implied by the authored intents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub input: u64,
    pub other_country: u64,
    pub invalid: u64,
    pub localized: u64,
    pub clean: u64,
    pub anomalous: u64,
    pub by_intent: BTreeMap<Intent, u64>,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub platform: Platform,
    pub records: Vec<SynthRecord>,
    pub geodb_csv: String,
    pub gfwatch_csv: String,
    pub truth_csv: String,
    pub population_csv: String,
    pub known_ooni: Vec<IpAddr>,
    pub known_gfwatch: Vec<IpAddr>,
    pub localized: Vec<IpAddr>,
}

/// File locations written by [`SynthWorld::write`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub measurements: PathBuf,
    pub geodb: PathBuf,
    pub gfwatch: PathBuf,
    pub truth_asn: PathBuf,
    pub population: PathBuf,
    pub known_ooni: PathBuf,
    pub known_gfwatch: PathBuf,
    pub localized: PathBuf,
}

impl SynthPaths {
    /// Pipeline paths reading these files and writing into `output`.
    pub fn paths_config(&self, output: impl Into<PathBuf>) -> PathsConfig {
        PathsConfig {
            inputs: vec![self.measurements.clone()],
            geodb: self.geodb.clone(),
            gfwatch: Some(self.gfwatch.clone()),
            population: Some(self.population.clone()),
            truth_asn: Some(self.truth_asn.clone()),
            known_ooni: Some(self.known_ooni.clone()),
            known_gfwatch: Some(self.known_gfwatch.clone()),
            localized: Some(self.localized.clone()),
            output: output.into(),
        }
    }

    /// The same files named relative to `dir`.
    pub fn relative_to(&self, dir: &Path) -> SynthPaths {
        let r = |p: &PathBuf| {
            p.strip_prefix(dir)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| p.clone())
        };
        SynthPaths {
            measurements: r(&self.measurements),
            geodb: r(&self.geodb),
            gfwatch: r(&self.gfwatch),
            truth_asn: r(&self.truth_asn),
            population: r(&self.population),
            known_ooni: r(&self.known_ooni),
            known_gfwatch: r(&self.known_gfwatch),
            localized: r(&self.localized),
        }
    }
}

const LOCALIZED_IP: Ipv4Addr = Ipv4Addr::new(192, 124, 249, 111);
const ROOT_IP: Ipv4Addr = Ipv4Addr::new(198, 41, 0, 4);
const INACTIVE_DOMAIN: &str = "inactive-site.net";
const PERIOD_SECS: i64 = 84 * 3600;
const MIN_PROBES_PER_PERIOD: usize = 6;

struct Network {
    asn: u32,
    name: &'static str,
    country: &'static str,
    base: [u8; 2],
    len: u8,
}

const HOSTING: [Network; 5] = [
    Network {
        asn: 13335,
        name: "CLOUDFLARENET",
        country: "US",
        base: [104, 16],
        len: 12,
    },
    Network {
        asn: 20940,
        name: "Akamai International B.V.",
        country: "NL",
        base: [23, 32],
        len: 11,
    },
    Network {
        asn: 54113,
        name: "FASTLY",
        country: "US",
        base: [151, 101],
        len: 16,
    },
    Network {
        asn: 16509,
        name: "AMAZON-02",
        country: "US",
        base: [52, 84],
        len: 15,
    },
    Network {
        asn: 15169,
        name: "GOOGLE",
        country: "US",
        base: [142, 250],
        len: 15,
    },
];

const CN_ACCESS: [Network; 4] = [
    Network {
        asn: 4134,
        name: "CHINANET-BACKBONE",
        country: "CN",
        base: [58, 32],
        len: 13,
    },
    Network {
        asn: 4837,
        name: "CHINA169-BACKBONE",
        country: "CN",
        base: [123, 112],
        len: 12,
    },
    Network {
        asn: 9808,
        name: "CHINAMOBILE-CN",
        country: "CN",
        base: [120, 192],
        len: 10,
    },
    Network {
        asn: 4812,
        name: "CHINANET-SH-AP",
        country: "CN",
        base: [222, 64],
        len: 11,
    },
];

const US_ACCESS: [Network; 3] = [
    Network {
        asn: 7922,
        name: "COMCAST-7922",
        country: "US",
        base: [73, 0],
        len: 8,
    },
    Network {
        asn: 701,
        name: "UUNET",
        country: "US",
        base: [71, 160],
        len: 11,
    },
    Network {
        asn: 7018,
        name: "ATT-INTERNET4",
        country: "US",
        base: [12, 0],
        len: 8,
    },
];

const CN_POPULATION: [f64; 4] = [0.45, 0.3, 0.2, 0.03];
const US_POPULATION: [f64; 3] = [0.3, 0.2, 0.25];

/// Tagged fake addresses; the rest stay outside the GeoIP table.
const FAKE_NETWORKS: [(&str, u8, u32, &str, &str); 2] = [
    ("31.13.64.0", 18, 32934, "FACEBOOK", "US"),
    ("108.160.160.0", 20, 19679, "DROPBOX", "US"),
];

fn ip(base: [u8; 2], c: usize, d: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(
        base[0],
        base[1],
        (c % 250) as u8,
        (d % 250) as u8 + 1,
    ))
}

fn domain_name(k: usize) -> String {
    format!("site{k:03}.com")
}

struct Domain {
    name: String,
    host: usize,
    ips: Vec<IpAddr>,
    alt_ip: IpAddr,
    listed: Option<(NaiveDate, Option<NaiveDate>)>,
}

fn build_domains(opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Vec<Domain> {
    let n = opts.domains.max(2);
    let listed = ((opts.listed_share * n as f64).round() as usize).min(n);
    let mut listed_set: Vec<usize> = rand::seq::index::sample(rng, n, listed).into_vec();
    listed_set.sort_unstable();
    let mid = opts.start + Duration::days(i64::from(opts.months.max(1)) * 30 / 2);
    (0..n)
        .map(|k| {
            let clean_control = opts.scenario == Scenario::CleanControl;
            let host = if clean_control {
                k % 2
            } else {
                k % HOSTING.len()
            };
            let count = if clean_control { 2 } else { 1 + k % 3 };
            let base = HOSTING[host].base;
            let listed = listed_set.binary_search(&k).ok().map(|pos| {
                let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
                // The first two listed domains are unblocked half way through.
                (start, (pos < 2 && listed > 4).then_some(mid))
            });
            Domain {
                name: domain_name(k),
                host,
                ips: (0..count).map(|j| ip(base, k, 10 + j)).collect(),
                alt_ip: ip(base, k, 200),
                listed,
            }
        })
        .collect()
}

fn censored_on(d: &Domain, date: NaiveDate) -> bool {
    d.listed
        .is_some_and(|(s, e)| date >= s && e.is_none_or(|e| date <= e))
}

fn add_months(d: NaiveDate, months: u32) -> NaiveDate {
    let total = d.year() * 12 + d.month0() as i32 + months as i32;
    NaiveDate::from_ymd_opt(total.div_euclid(12), total.rem_euclid(12) as u32 + 1, 1)
        .expect("valid date")
}

struct Vantage {
    country: &'static str,
    net: &'static Network,
    ip: IpAddr,
}

fn pick_vantage(rng: &mut ChaCha8Rng, opts: &SynthOptions) -> Vantage {
    let china =
        opts.scenario == Scenario::Censorship && rng.random_bool(opts.china_share.clamp(0.0, 1.0));
    let (nets, country): (&'static [Network], &'static str) = if china {
        (&CN_ACCESS, "CN")
    } else {
        (&US_ACCESS, "US")
    };
    let net = &nets[rng.random_range(0..nets.len())];
    Vantage {
        country,
        net,
        ip: ip(net.base, rng.random_range(0..20), 53),
    }
}

fn draw_intent(rng: &mut ChaCha8Rng, opts: &SynthOptions, censored: bool) -> Intent {
    if opts.scenario == Scenario::CleanControl {
        return Intent::Clean;
    }
    let u: f64 = rng.random();
    let invalid = opts.invalid_share;
    if u < invalid {
        let kinds: &[Intent] = match opts.platform {
            Platform::Satellite => &[Intent::ControlFailed, Intent::OffControlGroup],
            Platform::Ooni => &[
                Intent::ControlFailed,
                Intent::NonDnsVerdict,
                Intent::InvalidAsn,
            ],
        };
        return kinds[rng.random_range(0..kinds.len())];
    }
    if censored {
        return if rng.random_bool(opts.injection_failure.clamp(0.0, 1.0)) {
            Intent::InjectionFailure
        } else {
            Intent::Censored
        };
    }
    let v: f64 = rng.random();
    let fp = opts.platform_false_positive;
    let loc = opts.localized_share;
    if v < fp {
        Intent::PlatformFalsePositive
    } else if v < fp + loc {
        Intent::Localized
    } else if v < fp + loc + 0.005 {
        Intent::Nxdomain
    } else if opts.platform == Platform::Satellite && v < fp + loc + 0.015 {
        Intent::EndControlFailed
    } else {
        Intent::Clean
    }
}

fn answer(ip: IpAddr, flags: [Option<bool>; 5]) -> SatelliteAnswer {
    SatelliteAnswer {
        ip,
        ip_match: flags[0],
        http_match: flags[1],
        cert_match: flags[2],
        asnum_match: flags[3],
        asname_match: flags[4],
    }
}

fn control(ok: bool) -> ControlQuery {
    ControlQuery {
        url: "a.root-servers.net".into(),
        rcode: if ok { 0 } else { -1 },
        has_type_a: ok,
        error: (!ok).then(|| "read udp: i/o timeout".to_string()),
        answers: if ok {
            vec![IpAddr::V4(ROOT_IP)]
        } else {
            Vec::new()
        },
    }
}

fn pick_fake(rng: &mut ChaCha8Rng, fakes: &[FakeIp], dist: &WeightedIndex<u32>) -> IpAddr {
    fakes[dist.sample(rng)].ip
}

#[allow(clippy::too_many_arguments)]
fn satellite_probe(
    rng: &mut ChaCha8Rng,
    opts: &SynthOptions,
    d: &Domain,
    v: &Vantage,
    t: DateTime<Utc>,
    intent: Intent,
    pattern: usize,
    fakes: &(Vec<FakeIp>, WeightedIndex<u32>),
) -> RawSatelliteProbe {
    let delta_ms = match opts.scenario {
        Scenario::CleanControl => 1000 * (1 + (pattern % 2) as i64),
        Scenario::Censorship => rng.random_range(400..3000),
    };
    let all_true = [Some(true); 5];
    let legit = |ips: &[IpAddr]| {
        ips.iter()
            .map(|&ip| answer(ip, all_true))
            .collect::<Vec<_>>()
    };
    let ok = |answers| TestAttempt {
        rcode: 0,
        has_type_a: true,
        error: None,
        answers,
    };
    let mut anomaly = false;
    let mut attempts = Vec::new();
    if opts.scenario == Scenario::Censorship && rng.random_bool(0.05) {
        attempts.push(TestAttempt {
            rcode: -1,
            has_type_a: false,
            error: Some("read udp: i/o timeout".into()),
            answers: Vec::new(),
        });
    }
    match intent {
        Intent::Censored => {
            anomaly = true;
            let mut ans = vec![pick_fake(rng, &fakes.0, &fakes.1)];
            if rng.random_bool(0.15) {
                let second = pick_fake(rng, &fakes.0, &fakes.1);
                if second != ans[0] {
                    ans.push(second);
                }
            }
            let untagged_flags = [Some(false), None, None, Some(false), Some(false)];
            let tagged_flags = [
                Some(false),
                Some(false),
                Some(false),
                Some(false),
                Some(false),
            ];
            let ans = ans
                .into_iter()
                .map(|ip| {
                    answer(
                        ip,
                        if rng.random_bool(0.5) {
                            tagged_flags
                        } else {
                            untagged_flags
                        },
                    )
                })
                .collect();
            attempts.push(ok(ans));
        }
        Intent::PlatformFalsePositive => {
            anomaly = true;
            attempts.push(ok(vec![answer(
                d.alt_ip,
                [Some(false), Some(true), Some(true), Some(true), Some(true)],
            )]));
        }
        Intent::Localized => {
            anomaly = true;
            attempts.push(ok(vec![answer(IpAddr::V4(LOCALIZED_IP), [Some(false); 5])]));
        }
        Intent::Nxdomain => attempts.push(TestAttempt {
            rcode: 3,
            has_type_a: false,
            error: None,
            answers: Vec::new(),
        }),
        _ => {
            let mut ans = legit(&d.ips);
            if opts.scenario == Scenario::Censorship && rng.random_bool(0.02) {
                ans[0].http_match = None;
            }
            attempts.push(ok(ans));
        }
    }
    RawSatelliteProbe {
        test_domain: d.name.clone(),
        resolver_ip: v.ip,
        country: v.country.into(),
        probe_start: t,
        probe_end: t + Duration::milliseconds(delta_ms),
        control_queries: vec![
            control(intent != Intent::ControlFailed),
            control(intent != Intent::EndControlFailed),
        ],
        test_queries: attempts,
        anomaly,
        excluded: false,
        excluded_below_threshold: false,
        untagged_controls: false,
        untagged_response: false,
        passed_liveness: true,
        connect_error: false,
        in_control_group: intent != Intent::OffControlGroup,
    }
}

fn ooni_measurement(
    rng: &mut ChaCha8Rng,
    opts: &SynthOptions,
    d: &Domain,
    v: &Vantage,
    t: DateTime<Utc>,
    intent: Intent,
    pattern: usize,
    fakes: &(Vec<FakeIp>, WeightedIndex<u32>),
) -> RawOoniMeasurement {
    let clean_control = opts.scenario == Scenario::CleanControl;
    let runtime = if clean_control {
        1.0 + (pattern % 2) as f64
    } else {
        (rng.random_range(300..2500) as f64) / 1000.0
    };
    let mut m = RawOoniMeasurement {
        measurement_start_time: t,
        test_start_time: t - Duration::seconds(rng.random_range(0..120)),
        test_runtime: runtime,
        probe_cc: v.country.into(),
        probe_asn: v.net.asn,
        probe_network_name: v.net.name.into(),
        resolver_asn: v.net.asn,
        resolver_network_name: v.net.name.into(),
        test_domain: d.name.clone(),
        input: format!("http://{}/", d.name),
        dns_experiment_failure: None,
        http_experiment_failure: None,
        dns_consistency: DnsConsistency::Consistent,
        body_length_match: Some(true),
        status_code_match: Some(true),
        headers_match: Some(true),
        title_match: Some(true),
        body_proportion: Some(if clean_control {
            1.0
        } else {
            (rng.random_range(850..=1000) as f64) / 1000.0
        }),
        control_failure: None,
        blocking: BlockingVerdict::Accessible,
        answer_ips: d.ips.clone(),
        test_keys_asn: v.net.asn,
        test_keys_as_org_name: v.net.name.into(),
    };
    match intent {
        Intent::Censored => {
            m.dns_consistency = DnsConsistency::Inconsistent;
            m.blocking = BlockingVerdict::Dns;
            m.answer_ips = vec![pick_fake(rng, &fakes.0, &fakes.1)];
            m.http_experiment_failure = Some(
                if rng.random_bool(0.6) {
                    "connection_reset"
                } else {
                    "generic_timeout_error"
                }
                .into(),
            );
            m.body_length_match = None;
            m.status_code_match = None;
            m.headers_match = None;
            m.title_match = None;
            m.body_proportion = Some(0.0);
        }
        Intent::PlatformFalsePositive => {
            m.dns_consistency = DnsConsistency::Inconsistent;
            m.blocking = BlockingVerdict::Dns;
            m.answer_ips = vec![d.alt_ip];
        }
        Intent::Localized => {
            m.dns_consistency = DnsConsistency::Inconsistent;
            m.blocking = BlockingVerdict::Dns;
            m.answer_ips = vec![IpAddr::V4(LOCALIZED_IP)];
            m.title_match = Some(false);
            m.body_length_match = Some(false);
            m.body_proportion = Some(0.05);
        }
        Intent::Nxdomain => {
            m.dns_experiment_failure = Some("dns_nxdomain_error".into());
            m.dns_consistency = DnsConsistency::Inconsistent;
            m.answer_ips = Vec::new();
        }
        Intent::ControlFailed => m.control_failure = Some("connection_refused".into()),
        Intent::NonDnsVerdict => {
            m.blocking = BlockingVerdict::Other(Some("http-failure".into()));
            m.http_experiment_failure = Some("connection_reset".into());
        }
        Intent::InvalidAsn => m.probe_asn = 0,
        _ => {}
    }
    m
}

/// Builds a world deterministically from `opts`.
pub fn generate(opts: &SynthOptions) -> SynthWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let domains = build_domains(opts, &mut rng);
    let fakes = if opts.fake_ips.is_empty() {
        default_fake_ips()
    } else {
        opts.fake_ips.clone()
    };
    let dist = WeightedIndex::new(fakes.iter().map(|f| f.weight.max(1))).expect("positive weights");
    let fakes = (fakes, dist);

    // Whole probing periods only, so no domain falls silent at the edges.
    let midnight = |d: NaiveDate| {
        Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight"))
            .timestamp()
    };
    let first = midnight(opts.start).div_euclid(PERIOD_SECS) + 1;
    let last = midnight(add_months(opts.start, opts.months.max(1))).div_euclid(PERIOD_SECS);
    let start = Utc
        .timestamp_opt(first * PERIOD_SECS, 0)
        .single()
        .expect("in range");
    let n = opts.records.max(1);
    // Small worlds use fewer periods so each domain still answers often
    // enough in every one of them.
    let periods = (last - first).min((n / (opts.domains.max(2) * MIN_PROBES_PER_PERIOD)) as i64);
    let span = periods.max(1) * PERIOD_SECS;

    let mut records = Vec::with_capacity(n + 2);
    for i in 0..n {
        let d = &domains[i % domains.len()];
        let t = start + Duration::seconds((i as i64 * span) / n as i64);
        let v = pick_vantage(&mut rng, opts);
        let censored = v.country == "CN" && censored_on(d, t.date_naive());
        let intent = draw_intent(&mut rng, opts, censored);
        let pattern = i / domains.len();
        let document = match opts.platform {
            Platform::Satellite => {
                satellite_probe(&mut rng, opts, d, &v, t, intent, pattern, &fakes).to_document()
            }
            Platform::Ooni => {
                ooni_measurement(&mut rng, opts, d, &v, t, intent, pattern, &fakes).to_document()
            }
        };
        records.push(SynthRecord {
            document,
            country: v.country.into(),
            domain: d.name.clone(),
            time: t,
            intent,
        });
    }

    if opts.platform == Platform::Satellite && opts.scenario == Scenario::Censorship {
        let dead = Domain {
            name: INACTIVE_DOMAIN.into(),
            host: 0,
            ips: vec![ip(HOSTING[0].base, 249, 1)],
            alt_ip: ip(HOSTING[0].base, 249, 2),
            listed: None,
        };
        for k in 0..2 {
            let v = pick_vantage(&mut rng, opts);
            let t = start + Duration::minutes(k);
            let probe = satellite_probe(
                &mut rng,
                opts,
                &dead,
                &v,
                t,
                Intent::InactiveDomain,
                0,
                &fakes,
            );
            records.push(SynthRecord {
                document: probe.to_document(),
                country: v.country.into(),
                domain: dead.name.clone(),
                time: t,
                intent: Intent::InactiveDomain,
            });
        }
    }

    let mut geodb = String::from("prefix,asn,as_name,country\n");
    let mut net_line = |base: [u8; 2], len: u8, asn: u32, name: &str, cc: &str| {
        let _ = writeln!(
            geodb,
            "{}.{}.0.0/{len},AS{asn},{name},{cc}",
            base[0], base[1]
        );
    };
    for net in HOSTING.iter().chain(&CN_ACCESS).chain(&US_ACCESS) {
        net_line(net.base, net.len, net.asn, net.name, net.country);
    }
    let _ = writeln!(geodb, "198.41.0.0/24,AS26415,VERISIGN,US");
    let _ = writeln!(geodb, "192.124.249.0/24,AS30148,SUCURI-SEC,US");
    for (prefix, len, asn, name, cc) in FAKE_NETWORKS {
        let _ = writeln!(geodb, "{prefix}/{len},AS{asn},{name},{cc}");
    }

    let mut gfwatch = String::from("domain,start_date,end_date\n");
    let mut truth = String::from("domain,asn\n");
    for d in &domains {
        if let Some((s, e)) = d.listed {
            let _ = writeln!(
                gfwatch,
                "{},{s},{}",
                d.name,
                e.map_or("open".to_string(), |e| e.to_string())
            );
        }
        let _ = writeln!(truth, "{},AS{}", d.name, HOSTING[d.host].asn);
    }
    let _ = writeln!(truth, "{INACTIVE_DOMAIN},AS{}", HOSTING[0].asn);

    let mut population = String::from("asn,ratio\n");
    for (net, r) in CN_ACCESS
        .iter()
        .zip(CN_POPULATION)
        .chain(US_ACCESS.iter().zip(US_POPULATION))
    {
        let _ = writeln!(population, "AS{},{r}", net.asn);
    }

    SynthWorld {
        platform: opts.platform,
        records,
        geodb_csv: geodb,
        gfwatch_csv: gfwatch,
        truth_csv: truth,
        population_csv: population,
        known_ooni: fakes
            .0
            .iter()
            .filter(|f| f.known_to_ooni)
            .map(|f| f.ip)
            .collect(),
        known_gfwatch: fakes
            .0
            .iter()
            .filter(|f| f.known_to_gfwatch)
            .map(|f| f.ip)
            .collect(),
        localized: vec![IpAddr::V4(LOCALIZED_IP)],
    }
}

impl SynthWorld {
    /// Expected curation counts when keeping `countries` (empty keeps all)
    /// and excluding localized answers.
    pub fn expected_counts(&self, countries: &[&str]) -> ExpectedCounts {
        let mut c = ExpectedCounts {
            input: self.records.len() as u64,
            ..Default::default()
        };
        for r in &self.records {
            if !countries.is_empty() && !countries.contains(&r.country.as_str()) {
                c.other_country += 1;
                continue;
            }
            *c.by_intent.entry(r.intent).or_default() += 1;
            if !r.intent.is_valid() {
                c.invalid += 1;
            } else if r.intent == Intent::Localized {
                c.localized += 1;
            } else if r.intent.is_clean() {
                c.clean += 1;
            } else {
                c.anomalous += 1;
            }
        }
        c
    }

    pub fn jsonl(&self) -> String {
        let mut out =
            String::with_capacity(self.records.iter().map(|r| r.document.len() + 1).sum());
        for r in &self.records {
            out.push_str(&r.document);
            out.push('\n');
        }
        out
    }

    /// Writes the measurements (gzip when `gzip`) and every side table into
    /// `dir`, prefixing file names with the platform.
    pub fn write(&self, dir: &Path, gzip: bool) -> std::io::Result<SynthPaths> {
        std::fs::create_dir_all(dir)?;
        let p = self.platform.as_str();
        let measurements = dir.join(if gzip {
            format!("{p}.jsonl.gz")
        } else {
            format!("{p}.jsonl")
        });
        let body = self.jsonl();
        if gzip {
            let file = std::fs::File::create(&measurements)?;
            let mut enc = flate2::write::GzEncoder::new(file, flate2::Compression::fast());
            enc.write_all(body.as_bytes())?;
            enc.finish()?;
        } else {
            std::fs::write(&measurements, body)?;
        }
        let list = |ips: &[IpAddr]| ips.iter().map(|ip| format!("{ip}\n")).collect::<String>();
        let paths = SynthPaths {
            measurements,
            geodb: dir.join("geodb.csv"),
            gfwatch: dir.join("gfwatch.csv"),
            truth_asn: dir.join("truth_asn.csv"),
            population: dir.join("population.csv"),
            known_ooni: dir.join("known_ooni.txt"),
            known_gfwatch: dir.join("known_gfwatch.txt"),
            localized: dir.join("localized.txt"),
        };
        std::fs::write(&paths.geodb, &self.geodb_csv)?;
        std::fs::write(&paths.gfwatch, &self.gfwatch_csv)?;
        std::fs::write(&paths.truth_asn, &self.truth_csv)?;
        std::fs::write(&paths.population, &self.population_csv)?;
        std::fs::write(&paths.known_ooni, list(&self.known_ooni))?;
        std::fs::write(&paths.known_gfwatch, list(&self.known_gfwatch))?;
        std::fs::write(&paths.localized, list(&self.localized))?;
        Ok(paths)
    }
}
