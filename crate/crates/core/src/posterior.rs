//! Stored posterior draws and their on-disk form.
//!
//! The draws file is columnar: an 8-byte magic, then `n_chains`,
//! `draws_per_chain` and `n_params` as little-endian `u64`, then every
//! parameter column (all chains back to back) as little-endian `f64`. The
//! JSON manifest carries parameter names, dimensions, the configs, seeds and
//! acceptance rates.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params};
use crate::sampler::ChainConfig;

pub const DRAWS_MAGIC: &[u8; 8] = b"SRVDRAW1";
const MANIFEST_FORMAT: &str = "servecurve-draws/1";

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub seed: u64,
    /// Flat parameter vectors in [`Params::to_vec`] order.
    pub draws: Vec<Vec<f64>>,
    pub acceptance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub model: ModelConfig,
    pub chain: ChainConfig,
    /// Player names by index, as in the training dataset.
    pub players: Vec<String>,
    /// Player index of each server slot.
    pub servers: Vec<usize>,
    pub dataset_hash: String,
    pub chains: Vec<ChainDraws>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsManifest {
    pub format: String,
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub n_params: usize,
    pub names: Vec<String>,
    pub model: ModelConfig,
    pub chain: ChainConfig,
    pub seeds: Vec<u64>,
    pub players: Vec<String>,
    pub servers: Vec<usize>,
    pub dataset_hash: String,
    pub acceptance: Vec<BTreeMap<String, f64>>,
}

impl PosteriorDraws {
    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn names(&self) -> Vec<String> {
        Params::names(&self.model, self.n_servers(), self.n_players())
    }

    pub fn n_params(&self) -> usize {
        self.chains
            .first()
            .and_then(|c| c.draws.first())
            .map_or_else(|| self.names().len(), Vec::len)
    }

    /// Every draw of every chain, chain-major.
    pub fn flat(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    pub fn params(&self, flat: &[f64]) -> Result<Params> {
        Params::from_slice(&self.model, self.n_servers(), self.n_players(), flat)
    }

    pub fn all_params(&self) -> Result<Vec<Params>> {
        self.flat().map(|v| self.params(v)).collect()
    }

    /// Trace of parameter `index`, one vector per chain.
    pub fn column(&self, index: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[index]).collect())
            .collect()
    }

    pub fn server_slot(&self, player: usize) -> Option<usize> {
        self.servers.iter().position(|&s| s == player)
    }

    pub fn player_index(&self, name: &str) -> Option<usize> {
        self.players.iter().position(|p| p == name)
    }

    /// Acceptance rate per block averaged over chains.
    pub fn acceptance(&self) -> BTreeMap<String, f64> {
        let mut sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for c in &self.chains {
            for (k, v) in &c.acceptance {
                let e = sum.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        sum.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn manifest(&self) -> DrawsManifest {
        DrawsManifest {
            format: MANIFEST_FORMAT.into(),
            n_chains: self.n_chains(),
            draws_per_chain: self.draws_per_chain(),
            n_params: self.n_params(),
            names: self.names(),
            model: self.model.clone(),
            chain: self.chain.clone(),
            seeds: self.chains.iter().map(|c| c.seed).collect(),
            players: self.players.clone(),
            servers: self.servers.clone(),
            dataset_hash: self.dataset_hash.clone(),
            acceptance: self.chains.iter().map(|c| c.acceptance.clone()).collect(),
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let (nc, nd, np) = (self.n_chains(), self.draws_per_chain(), self.n_params());
        if self.chains.iter().any(|c| c.draws.len() != nd || c.draws.iter().any(|d| d.len() != np)) {
            return Err(Error::Format("ragged draws cannot be written".into()));
        }
        w.write_all(DRAWS_MAGIC)?;
        for v in [nc, nd, np] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(nc * nd * 8);
        for p in 0..np {
            buf.clear();
            for c in &self.chains {
                for d in &c.draws {
                    buf.extend_from_slice(&d[p].to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, manifest: DrawsManifest) -> Result<PosteriorDraws> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DRAWS_MAGIC {
            return Err(Error::Format("not a draws file".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *d = u64::from_le_bytes(b) as usize;
        }
        let [nc, nd, np] = dims;
        if (nc, nd, np) != (manifest.n_chains, manifest.draws_per_chain, manifest.n_params)
            || manifest.seeds.len() != nc
            || manifest.names.len() != np
        {
            return Err(Error::Format("draws file does not match its manifest".into()));
        }
        let mut chains: Vec<ChainDraws> = manifest
            .seeds
            .iter()
            .zip(manifest.acceptance.iter().cloned().chain(std::iter::repeat(BTreeMap::new())))
            .map(|(&seed, acceptance)| ChainDraws {
                seed,
                draws: vec![vec![0.0; np]; nd],
                acceptance,
            })
            .collect();
        let mut col = vec![0u8; nc * nd * 8];
        for p in 0..np {
            r.read_exact(&mut col)?;
            for (i, bytes) in col.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(bytes.try_into().expect("8 bytes"));
                chains[i / nd].draws[i % nd][p] = v;
            }
        }
        let draws = PosteriorDraws {
            model: manifest.model,
            chain: manifest.chain,
            players: manifest.players,
            servers: manifest.servers,
            dataset_hash: manifest.dataset_hash,
            chains,
        };
        if draws.names() != manifest.names {
            return Err(Error::Format("parameter names do not match the model".into()));
        }
        Ok(draws)
    }

    /// Writes `draws.bin` and `draws.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join("draws.bin"))?;
        self.write_binary(std::io::BufWriter::new(f))?;
        let json = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(dir.join("draws.json"), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<PosteriorDraws> {
        let dir = dir.as_ref();
        let manifest: DrawsManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("draws.json"))?)?;
        let f = std::fs::File::open(dir.join("draws.bin"))?;
        PosteriorDraws::read_binary(std::io::BufReader::new(f), manifest)
    }

    /// One row per stored draw: `chain`, `draw`, then every parameter.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names());
        out.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (d, draw) in chain.draws.iter().enumerate() {
                let mut row = vec![c.to_string(), d.to_string()];
                row.extend(draw.iter().map(|v| v.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
