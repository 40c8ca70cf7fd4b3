//! Point-by-point ingestion: CSV parsing, court derivation, rally-length
//! bucketing, player filtering, player indexing and train/test splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Rally lengths are paired (0–1, 2–3, …) into this many buckets.
pub const N_BUCKETS: usize = 15;
/// Longest raw rally kept by default.
pub const MAX_RALLY: u32 = 30;
/// Raw rallies up to this length count as short in summaries.
pub const SHORT_RALLY_MAX: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tournament {
    AusOpen,
    FrenchOpen,
    USOpen,
    Wimbledon,
}

impl Tournament {
    pub const ALL: [Tournament; 4] = [
        Tournament::AusOpen,
        Tournament::FrenchOpen,
        Tournament::USOpen,
        Tournament::Wimbledon,
    ];

    /// Lenient name matching: `"Australian Open"`, `"ausopen"`,
    /// `"2017-wimbledon"`, `"Roland Garros"` and similar.
    pub fn parse(raw: &str) -> Option<Tournament> {
        let key: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        if key.contains("wimbledon") {
            Some(Tournament::Wimbledon)
        } else if key.contains("ausopen") || key.contains("australian") {
            Some(Tournament::AusOpen)
        } else if key.contains("frenchopen") || key.contains("rolandgarros") {
            Some(Tournament::FrenchOpen)
        } else if key.contains("usopen") {
            Some(Tournament::USOpen)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tour {
    Atp,
    Wta,
}

impl Tour {
    pub fn parse(raw: &str) -> Option<Tour> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "atp" | "men" | "m" | "male" => Some(Tour::Atp),
            "wta" | "women" | "w" | "f" | "female" => Some(Tour::Wta),
            _ => None,
        }
    }
}

/// Playing surface. The numeric codes 1, 2, 3 are used in canonical files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Court {
    Clay = 1,
    Grass = 2,
    Hard = 3,
}

impl Court {
    pub const ALL: [Court; 3] = [Court::Clay, Court::Grass, Court::Hard];

    /// 0-based position in `ALL`.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Court> {
        match code {
            1 => Some(Court::Clay),
            2 => Some(Court::Grass),
            3 => Some(Court::Hard),
            _ => None,
        }
    }
}

pub fn court_of(t: Tournament) -> Court {
    match t {
        Tournament::AusOpen | Tournament::USOpen => Court::Hard,
        Tournament::FrenchOpen => Court::Clay,
        Tournament::Wimbledon => Court::Grass,
    }
}

/// Maps a raw rally length to its bucket `min(raw / 2 + 1, 15)`.
pub fn aggregate_rally(raw: u32) -> u8 {
    (raw / 2 + 1).min(N_BUCKETS as u32) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPointRecord {
    pub server_id: String,
    pub receiver_id: String,
    pub rally_length: u32,
    pub server_won: bool,
    pub tournament: Tournament,
    pub tour: Tour,
    pub match_id: String,
}

/// How the point-winner column identifies the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WinnerEncoding {
    /// Fixed labels meaning "server won" / "receiver won" (case-insensitive).
    Labels {
        server: Vec<String>,
        receiver: Vec<String>,
    },
    /// The column holds the winner's id, compared against the server column.
    PlayerId,
}

impl Default for WinnerEncoding {
    fn default() -> Self {
        WinnerEncoding::Labels {
            server: vec!["server".into(), "1".into(), "true".into()],
            receiver: vec!["receiver".into(), "0".into(), "false".into()],
        }
    }
}

/// Column names and value encodings of the input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub server: String,
    pub receiver: String,
    pub rally_count: String,
    pub point_winner: String,
    pub tournament: String,
    pub match_id: String,
    /// Optional tour column; rows use `default_tour` when absent.
    pub tour: Option<String>,
    pub default_tour: Tour,
    pub winner: WinnerEncoding,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            server: "server".into(),
            receiver: "receiver".into(),
            rally_count: "rally_count".into(),
            point_winner: "point_winner".into(),
            tournament: "tournament".into(),
            match_id: "match_id".into(),
            tour: None,
            default_tour: Tour::Atp,
            winner: WinnerEncoding::default(),
        }
    }
}

/// Per-reason counts of rows that were dropped while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropTally {
    pub missing_rally: usize,
    pub bad_rally: usize,
    pub missing_winner: usize,
    pub bad_winner: usize,
    pub bad_tournament: usize,
    pub bad_tour: usize,
    pub bad_players: usize,
}

impl DropTally {
    pub fn total(&self) -> usize {
        self.missing_rally
            + self.bad_rally
            + self.missing_winner
            + self.bad_winner
            + self.bad_tournament
            + self.bad_tour
            + self.bad_players
    }
}

#[derive(Debug, Clone)]
pub struct ParsedPoints {
    pub records: Vec<RawPointRecord>,
    pub rows: usize,
    pub dropped: DropTally,
}

pub fn parse_points_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<ParsedPoints> {
    let file = File::open(path.as_ref())?;
    parse_points_reader(file, schema)
}

pub fn parse_points_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<ParsedPoints> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("CSV has no header row".into()));
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_server = col(&schema.server)?;
    let c_receiver = col(&schema.receiver)?;
    let c_rally = col(&schema.rally_count)?;
    let c_winner = col(&schema.point_winner)?;
    let c_tournament = col(&schema.tournament)?;
    let c_match = col(&schema.match_id)?;
    let c_tour = schema.tour.as_deref().map(col).transpose()?;

    let mut records = Vec::new();
    let mut dropped = DropTally::default();
    let mut rows = 0usize;
    for row in rdr.records() {
        let row = row?;
        rows += 1;
        let field = |i: usize| row.get(i).unwrap_or("");

        let server = field(c_server);
        let receiver = field(c_receiver);
        if server.is_empty() || receiver.is_empty() || server == receiver {
            dropped.bad_players += 1;
            continue;
        }
        let rally = field(c_rally);
        if rally.is_empty() {
            dropped.missing_rally += 1;
            continue;
        }
        let Ok(rally_length) = rally.parse::<u32>() else {
            dropped.bad_rally += 1;
            continue;
        };
        let winner = field(c_winner);
        if winner.is_empty() {
            dropped.missing_winner += 1;
            continue;
        }
        let server_won = match &schema.winner {
            WinnerEncoding::PlayerId => {
                if winner == server {
                    Some(true)
                } else if winner == receiver {
                    Some(false)
                } else {
                    None
                }
            }
            WinnerEncoding::Labels { server: s, receiver: r } => {
                if s.iter().any(|v| v.eq_ignore_ascii_case(winner)) {
                    Some(true)
                } else if r.iter().any(|v| v.eq_ignore_ascii_case(winner)) {
                    Some(false)
                } else {
                    None
                }
            }
        };
        let Some(server_won) = server_won else {
            dropped.bad_winner += 1;
            continue;
        };
        let Some(tournament) = Tournament::parse(field(c_tournament)) else {
            dropped.bad_tournament += 1;
            continue;
        };
        let tour = match c_tour {
            Some(i) => match Tour::parse(field(i)) {
                Some(t) => t,
                None => {
                    dropped.bad_tour += 1;
                    continue;
                }
            },
            None => schema.default_tour,
        };
        records.push(RawPointRecord {
            server_id: server.to_string(),
            receiver_id: receiver.to_string(),
            rally_length,
            server_won,
            tournament,
            tour,
            match_id: field(c_match).to_string(),
        });
    }
    if rows == 0 {
        return Err(Error::EmptyInput("CSV has no data rows".into()));
    }
    if dropped.total() > 0 {
        log::warn!("dropped {} of {rows} rows: {dropped:?}", dropped.total());
    }
    if 2 * dropped.total() > rows {
        return Err(Error::TooManyDropped {
            dropped: dropped.total(),
            total: rows,
        });
    }
    Ok(ParsedPoints {
        records,
        rows,
        dropped,
    })
}

/// Keeps points with `rally_length <= max_rally`.
pub fn filter_rallies(records: Vec<RawPointRecord>, max_rally: u32) -> Vec<RawPointRecord> {
    records
        .into_iter()
        .filter(|r| r.rally_length <= max_rally)
        .collect()
}

pub fn filter_tour(records: Vec<RawPointRecord>, tour: Tour) -> Vec<RawPointRecord> {
    records.into_iter().filter(|r| r.tour == tour).collect()
}

/// Keeps the serve points of servers that served in at least `min_matches`
/// distinct matches. Receivers are not filtered.
pub fn filter_players(records: Vec<RawPointRecord>, min_matches: usize) -> Vec<RawPointRecord> {
    let mut matches: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for r in &records {
        matches
            .entry(r.server_id.as_str())
            .or_default()
            .insert(r.match_id.as_str());
    }
    let keep: BTreeSet<String> = matches
        .into_iter()
        .filter(|(_, m)| m.len() >= min_matches)
        .map(|(s, _)| s.to_string())
        .collect();
    records
        .into_iter()
        .filter(|r| keep.contains(&r.server_id))
        .collect()
}

/// One point in model coordinates. `server` and `receiver` index
/// [`Dataset::players`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregatedPoint {
    pub server: usize,
    pub receiver: usize,
    pub x: u8,
    pub y: bool,
    pub court: Court,
}

/// Aggregated points with player index maps. Players are sorted by name;
/// servers are the players that serve at least once (or were registered as
/// servers explicitly).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    players: Vec<String>,
    servers: Vec<usize>,
    server_slot: Vec<Option<usize>>,
    points: Vec<AggregatedPoint>,
}

/// JSON form of the index maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlayerIndex {
    pub players: Vec<String>,
    pub servers: Vec<usize>,
}

impl Dataset {
    /// Builds from filtered raw records; one point per record, in order.
    pub fn from_records(records: &[RawPointRecord]) -> Dataset {
        let names: BTreeSet<&str> = records
            .iter()
            .flat_map(|r| [r.server_id.as_str(), r.receiver_id.as_str()])
            .collect();
        let players: Vec<String> = names.into_iter().map(str::to_string).collect();
        let index: HashMap<&str, usize> = players
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let points = records
            .iter()
            .map(|r| AggregatedPoint {
                server: index[r.server_id.as_str()],
                receiver: index[r.receiver_id.as_str()],
                x: aggregate_rally(r.rally_length),
                y: r.server_won,
                court: court_of(r.tournament),
            })
            .collect();
        Dataset::new(players, points).expect("indices built from the same records")
    }

    /// Servers are derived from the points.
    pub fn new(players: Vec<String>, points: Vec<AggregatedPoint>) -> Result<Dataset> {
        let servers: BTreeSet<usize> = points.iter().map(|p| p.server).collect();
        Dataset::from_parts(players, servers.into_iter().collect(), points)
    }

    /// Explicit server list; allows servers (and players) without points.
    pub fn from_parts(
        players: Vec<String>,
        servers: Vec<usize>,
        points: Vec<AggregatedPoint>,
    ) -> Result<Dataset> {
        let n = players.len();
        let mut sorted = players.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != players {
            return Err(Error::InvalidParameter(
                "player names must be unique and sorted".into(),
            ));
        }
        let mut server_slot = vec![None; n];
        for (slot, &s) in servers.iter().enumerate() {
            if s >= n {
                return Err(Error::InvalidParameter(format!("server index {s} out of range")));
            }
            if server_slot[s].is_some() {
                return Err(Error::InvalidParameter(format!("server index {s} repeated")));
            }
            server_slot[s] = Some(slot);
        }
        for p in &points {
            if p.server >= n || p.receiver >= n {
                return Err(Error::InvalidParameter(format!(
                    "point references player {} or {} but only {n} players exist",
                    p.server, p.receiver
                )));
            }
            if p.server == p.receiver {
                return Err(Error::InvalidParameter("server equals receiver".into()));
            }
            if server_slot[p.server].is_none() {
                return Err(Error::InvalidParameter(format!(
                    "player {} serves but is not registered as a server",
                    p.server
                )));
            }
            if !(1..=N_BUCKETS as u8).contains(&p.x) {
                return Err(Error::InvalidParameter(format!("bucket {} outside 1..=15", p.x)));
            }
        }
        Ok(Dataset {
            players,
            servers,
            server_slot,
            points,
        })
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    /// Player indices of the servers, in server-slot order.
    pub fn servers(&self) -> &[usize] {
        &self.servers
    }

    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn server_slot(&self, player: usize) -> Option<usize> {
        self.server_slot.get(player).copied().flatten()
    }

    pub fn points(&self) -> &[AggregatedPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn player_index(&self, name: &str) -> Option<usize> {
        self.players.binary_search_by(|p| p.as_str().cmp(name)).ok()
    }

    pub fn server_names(&self) -> Vec<&str> {
        self.servers.iter().map(|&i| self.players[i].as_str()).collect()
    }

    /// `(wins, total)` per server slot and bucket (`x - 1`).
    pub fn tallies(&self) -> Vec<[(u32, u32); N_BUCKETS]> {
        let mut t = vec![[(0u32, 0u32); N_BUCKETS]; self.servers.len()];
        for p in &self.points {
            let slot = self.server_slot[p.server].expect("validated");
            let cell = &mut t[slot][p.x as usize - 1];
            cell.0 += p.y as u32;
            cell.1 += 1;
        }
        t
    }

    /// Distinct receivers among the points.
    pub fn n_receivers(&self) -> usize {
        self.points
            .iter()
            .map(|p| p.receiver)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Points satisfying `keep`, re-indexed over the players they mention.
    pub fn subset(&self, keep: impl Fn(&AggregatedPoint) -> bool) -> Dataset {
        let kept: Vec<AggregatedPoint> = self.points.iter().copied().filter(|p| keep(p)).collect();
        let used: BTreeSet<usize> = kept.iter().flat_map(|p| [p.server, p.receiver]).collect();
        let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let players = used.iter().map(|&o| self.players[o].clone()).collect();
        let points = kept
            .into_iter()
            .map(|p| AggregatedPoint {
                server: remap[&p.server],
                receiver: remap[&p.receiver],
                ..p
            })
            .collect();
        Dataset::new(players, points).expect("subset of a valid dataset")
    }

    pub fn index(&self) -> PlayerIndex {
        PlayerIndex {
            players: self.players.clone(),
            servers: self.servers.clone(),
        }
    }

    /// Canonical CSV: `server_index,receiver_index,x,y,court`.
    pub fn write_canonical_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["server_index", "receiver_index", "x", "y", "court"])?;
        for p in &self.points {
            wtr.write_record([
                p.server.to_string(),
                p.receiver.to_string(),
                p.x.to_string(),
                (p.y as u8).to_string(),
                p.court.code().to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_canonical_csv<R: Read>(r: R, index: PlayerIndex) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut points = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |i: usize| -> Result<usize> {
                row.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad field {i} on data row {}", line + 1)))
            };
            let court = Court::from_code(num(4)? as u8)
                .ok_or_else(|| Error::Format(format!("bad court on data row {}", line + 1)))?;
            points.push(AggregatedPoint {
                server: num(0)?,
                receiver: num(1)?,
                x: num(2)? as u8,
                y: num(3)? == 1,
                court,
            });
        }
        Dataset::from_parts(index.players, index.servers, points)
    }

    /// SHA-256 over the canonical CSV and the player names.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_canonical_csv(&mut buf).expect("writing to memory");
        let mut h = Sha256::new();
        h.update(&buf);
        for p in &self.players {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        for s in &self.servers {
            h.update((*s as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Server and receiver counts on both sides of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_servers: usize,
    pub train_receivers: usize,
    pub test_servers: usize,
    pub test_receivers: usize,
}

/// Holds out `n_test_servers` servers chosen uniformly at random (seeded):
/// all of their serve points go to the test set.
pub fn split_train_test(
    dataset: &Dataset,
    n_test_servers: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, SplitSummary)> {
    let n = dataset.n_servers();
    if n_test_servers > 0 && n_test_servers >= n {
        return Err(Error::InvalidParameter(format!(
            "cannot hold out {n_test_servers} of {n} servers"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, n_test_servers)
        .into_iter()
        .map(|slot| dataset.servers[slot])
        .collect();
    let (train, test) = if held.is_empty() {
        (dataset.clone(), dataset.subset(|_| false))
    } else {
        (
            dataset.subset(|p| !held.contains(&p.server)),
            dataset.subset(|p| held.contains(&p.server)),
        )
    };
    let summary = SplitSummary {
        train_servers: train.n_servers(),
        train_receivers: train.n_receivers(),
        test_servers: test.n_servers(),
        test_receivers: test.n_receivers(),
    };
    Ok((train, test, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketFrequency {
    pub x: u8,
    pub points: usize,
    pub server_wins: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourSummary {
    pub matches: BTreeMap<Tournament, usize>,
    pub players: BTreeMap<Tournament, usize>,
    pub short_rallies: usize,
    pub long_rallies: usize,
    pub total: usize,
    pub short_fraction: f64,
    pub buckets: Vec<BucketFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tours: BTreeMap<Tour, TourSummary>,
    pub total: usize,
}

/// Per-tour match and player counts by tournament, short/long rally counts
/// and per-bucket server win frequencies.
pub fn summarize(records: &[RawPointRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no points to summarize".into()));
    }
    let mut tours = BTreeMap::new();
    let by_tour: BTreeSet<Tour> = records.iter().map(|r| r.tour).collect();
    for tour in by_tour {
        let recs: Vec<&RawPointRecord> = records.iter().filter(|r| r.tour == tour).collect();
        let mut matches: BTreeMap<Tournament, BTreeSet<&str>> = BTreeMap::new();
        let mut players: BTreeMap<Tournament, BTreeSet<&str>> = BTreeMap::new();
        let mut buckets = vec![(0usize, 0usize); N_BUCKETS];
        let mut short = 0;
        for r in &recs {
            matches.entry(r.tournament).or_default().insert(&r.match_id);
            let ps = players.entry(r.tournament).or_default();
            ps.insert(&r.server_id);
            ps.insert(&r.receiver_id);
            if r.rally_length <= SHORT_RALLY_MAX {
                short += 1;
            }
            let b = &mut buckets[aggregate_rally(r.rally_length) as usize - 1];
            b.0 += 1;
            b.1 += r.server_won as usize;
        }
        let total = recs.len();
        tours.insert(
            tour,
            TourSummary {
                matches: matches.into_iter().map(|(t, m)| (t, m.len())).collect(),
                players: players.into_iter().map(|(t, p)| (t, p.len())).collect(),
                short_rallies: short,
                long_rallies: total - short,
                total,
                short_fraction: short as f64 / total as f64,
                buckets: buckets
                    .into_iter()
                    .enumerate()
                    .filter(|(_, (n, _))| *n > 0)
                    .map(|(i, (n, w))| BucketFrequency {
                        x: i as u8 + 1,
                        points: n,
                        server_wins: w,
                        frequency: w as f64 / n as f64,
                    })
                    .collect(),
            },
        );
    }
    Ok(Summary {
        tours,
        total: records.len(),
    })
}
