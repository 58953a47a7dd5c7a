use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::DemandModel;
use crate::error::PolicyError;
use crate::model::DataPlan;

use super::solver::{solve, Solution, SolverConfig};
use super::{PriceBelief, UtilityFunction};

const MAGIC: &[u8; 8] = b"RLVRPOL\0";
const VERSION: u32 = 1;

#[derive(Serialize)]
struct KeyInputs<'a> {
    version: u32,
    plan: &'a DataPlan,
    model: &'a DemandModel,
    utility: &'a UtilityFunction,
    belief: &'a PriceBelief,
    config: &'a SolverConfig,
}

/// Hex SHA-256 of everything that determines a solution.
pub fn cache_key(
    plan: &DataPlan,
    model: &DemandModel,
    utility: &UtilityFunction,
    belief: &PriceBelief,
    config: &SolverConfig,
) -> String {
    let inputs = KeyInputs { version: VERSION, plan, model, utility, belief, config };
    let bytes = serde_json::to_vec(&inputs).expect("key inputs serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedSolution {
    pub key: String,
    pub solution: Solution,
}

impl CachedSolution {
    pub fn write_to(&self, path: &Path) -> Result<(), PolicyError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            bincode::serialize_into(&mut w, self).map_err(|e| PolicyError::Cache(e.to_string()))?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, PolicyError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        let mut version = [0u8; 4];
        r.read_exact(&mut magic)?;
        r.read_exact(&mut version)?;
        if &magic != MAGIC {
            return Err(PolicyError::Cache(format!("{} is not a policy cache file", path.display())));
        }
        let version = u32::from_le_bytes(version);
        if version != VERSION {
            return Err(PolicyError::Cache(format!("cache version {version}, expected {VERSION}")));
        }
        bincode::deserialize_from(r).map_err(|e| PolicyError::Cache(e.to_string()))
    }
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.policy"))
}

/// Returns the cached solution for these inputs, solving and storing it on a miss.
/// Unreadable or stale cache files are replaced.
pub fn load_or_solve(
    dir: &Path,
    plan: &DataPlan,
    model: &DemandModel,
    utility: &UtilityFunction,
    belief: &PriceBelief,
    config: &SolverConfig,
) -> Result<(Solution, bool), PolicyError> {
    let key = cache_key(plan, model, utility, belief, config);
    let path = cache_path(dir, &key);
    if path.exists() {
        match CachedSolution::read_from(&path) {
            Ok(hit) if hit.key == key => return Ok((hit.solution, true)),
            Ok(_) => log::warn!("cache file {} has a mismatched key, re-solving", path.display()),
            Err(e) => log::warn!("ignoring cache file {}: {e}", path.display()),
        }
    }
    let solution = solve(plan, model, utility, belief, config)?;
    fs::create_dir_all(dir)?;
    CachedSolution { key, solution: solution.clone() }.write_to(&path)?;
    Ok((solution, false))
}
