//! Parallel labelling and the on-disk label cache.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel;
use crate::dataset::LabeledPlacement;
use crate::error::{Error, Result};
use crate::link::LinkModel;
use crate::oracle;
use crate::scenario::{Placement, ScenarioConfig};

/// Runs the exhaustive search on every placement. Output order matches input
/// order whatever the worker count.
pub fn label_placements(config: &ScenarioConfig, link: &LinkModel, placements: &[Placement]) -> Vec<LabeledPlacement> {
    placements
        .par_iter()
        .map(|p| LabeledPlacement {
            placement: p.clone(),
            optimal: oracle::solve(&channel::realize(config, p), link),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    digest: String,
    tag: String,
    items: Vec<LabeledPlacement>,
}

/// Directory of labelled placements keyed by config digest and a caller tag
/// describing how the placements were generated.
#[derive(Debug, Clone)]
pub struct LabelCache {
    dir: PathBuf,
}

impl LabelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, config: &ScenarioConfig, tag: &str) -> PathBuf {
        self.dir.join(format!("labels-{}-{tag}.json", config.digest()))
    }

    /// Returns the cached labels for `(config, tag)` if present.
    ///
    /// A file whose stored digest or tag disagrees is treated as a miss.
    pub fn get(&self, config: &ScenarioConfig, tag: &str) -> Result<Option<Vec<LabeledPlacement>>> {
        let path = self.path_for(config, tag);
        if !path.exists() {
            return Ok(None);
        }
        let file: CacheFile = serde_json::from_slice(&std::fs::read(&path)?)?;
        if file.digest != config.digest() || file.tag != tag {
            return Ok(None);
        }
        Ok(Some(file.items))
    }

    pub fn put(&self, config: &ScenarioConfig, tag: &str, items: &[LabeledPlacement]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(config, tag);
        let file = CacheFile {
            digest: config.digest(),
            tag: tag.to_string(),
            items: items.to_vec(),
        };
        write_json(&path, &file)?;
        Ok(path)
    }

    /// Cached labels, or a fresh labelling run of `generate()` stored for
    /// next time.
    pub fn get_or_label(
        &self,
        config: &ScenarioConfig,
        link: &LinkModel,
        tag: &str,
        generate: impl FnOnce() -> Result<Vec<Placement>>,
    ) -> Result<Vec<LabeledPlacement>> {
        if let Some(items) = self.get(config, tag)? {
            return Ok(items);
        }
        let items = label_placements(config, link, &generate()?);
        self.put(config, tag, &items)?;
        Ok(items)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_drops;

    #[test]
    fn parallel_labels_match_sequential_order() {
        let config = ScenarioConfig::case3();
        let link = LinkModel::from_config(&config).unwrap();
        let drops = generate_drops(&config, 6);
        let labeled = label_placements(&config, &link, &drops);
        for (p, l) in drops.iter().zip(&labeled) {
            assert_eq!(&l.placement, p);
            assert_eq!(l.optimal, oracle::solve(&channel::realize(&config, p), &link));
        }
    }

    #[test]
    fn cache_is_keyed_by_config() {
        let dir = tempfile::tempdir().unwrap();
        let cache = LabelCache::new(dir.path());
        let config = ScenarioConfig::case1();
        let link = LinkModel::from_config(&config).unwrap();
        let first = cache
            .get_or_label(&config, &link, "drops-3", || Ok(generate_drops(&config, 3)))
            .unwrap();
        let again = cache
            .get_or_label(&config, &link, "drops-3", || panic!("should hit the cache"))
            .unwrap();
        assert_eq!(first, again);

        let other = ScenarioConfig {
            rng_seed: 2,
            ..config.clone()
        };
        assert!(cache.get(&other, "drops-3").unwrap().is_none());

        // a file renamed onto another key is not trusted
        std::fs::copy(cache.path_for(&config, "drops-3"), cache.path_for(&other, "drops-3")).unwrap();
        assert!(cache.get(&other, "drops-3").unwrap().is_none());
    }
}
