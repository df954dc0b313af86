use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use iconsim_core::data::{encode_png, load_manifest, read_image, IconRecord, Manifest};
use iconsim_core::index::{load_index, project_2d, EmbeddingIndex, Projection};
use iconsim_core::nn::{load_checkpoint, Model};
use iconsim_core::{Error, Result};

/// Everything a request may read. Immutable once built, apart from the
/// thumbnail cache.
pub struct ServiceState {
    pub model: Model<f32>,
    pub index: EmbeddingIndex,
    pub manifest: Manifest,
    pub thumbnails: ThumbnailCache,
    by_id: HashMap<String, usize>,
    /// Manifest positions in id order.
    sorted: Vec<usize>,
    projection: OnceLock<std::result::Result<Projection, String>>,
}

impl ServiceState {
    pub fn new(model: Model<f32>, index: EmbeddingIndex, manifest: Manifest, cache_dir: impl Into<PathBuf>) -> Result<Self> {
        if index.dim() != model.config().embedding_dim {
            return Err(Error::invalid(format!(
                "index dimension {} does not match the model's embedding dimension {}",
                index.dim(),
                model.config().embedding_dim
            )));
        }
        let by_id: HashMap<String, usize> = manifest.records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let missing: Vec<&str> = index.ids().iter().filter(|id| !by_id.contains_key(*id)).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(Error::UnknownId(missing.join(", ")));
        }
        let mut sorted: Vec<usize> = (0..manifest.records.len()).collect();
        sorted.sort_by(|&a, &b| manifest.records[a].id.cmp(&manifest.records[b].id));
        Ok(Self {
            model,
            index,
            manifest,
            thumbnails: ThumbnailCache::new(cache_dir),
            by_id,
            sorted,
            projection: OnceLock::new(),
        })
    }

    pub fn load(
        index: impl AsRef<Path>,
        checkpoint: impl AsRef<Path>,
        manifest: impl AsRef<Path>,
        cache_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let model = load_checkpoint(checkpoint)?.model;
        Self::new(model, load_index(index)?, load_manifest(manifest)?, cache_dir)
    }

    pub fn record(&self, id: &str) -> Option<&IconRecord> {
        self.by_id.get(id).map(|&i| &self.manifest.records[i])
    }

    pub fn records_by_id(&self) -> impl Iterator<Item = &IconRecord> {
        self.sorted.iter().map(|&i| &self.manifest.records[i])
    }

    pub fn projection(&self) -> std::result::Result<&Projection, &str> {
        self.projection
            .get_or_init(|| project_2d(&self.index).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(String::as_str)
    }

    /// PNG bytes of a manifest icon, rendered once and kept on disk.
    pub fn thumbnail(&self, id: &str) -> Result<Arc<Vec<u8>>> {
        let record = self.record(id).ok_or_else(|| Error::UnknownId(id.to_owned()))?;
        self.thumbnails.get(id, &self.manifest.resolve(record))
    }
}

type Slot = Arc<OnceLock<std::result::Result<Arc<Vec<u8>>, String>>>;

pub struct ThumbnailCache {
    dir: PathBuf,
    slots: Mutex<HashMap<String, Slot>>,
    generated: AtomicUsize,
}

impl ThumbnailCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            slots: Mutex::new(HashMap::new()),
            generated: AtomicUsize::new(0),
        }
    }

    /// Number of thumbnails rendered (not read back from disk) so far.
    pub fn generated(&self) -> usize {
        self.generated.load(Ordering::SeqCst)
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        let safe = id.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b)) && !id.starts_with('.');
        let name = if safe {
            id.to_owned()
        } else {
            id.bytes().map(|b| format!("{b:02x}")).collect()
        };
        self.dir.join(format!("{name}.png"))
    }

    pub fn get(&self, id: &str, source: &Path) -> Result<Arc<Vec<u8>>> {
        let slot = Arc::clone(self.slots.lock().expect("thumbnail lock").entry(id.to_owned()).or_default());
        slot.get_or_init(|| self.render(id, source).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::Image)
    }

    fn render(&self, id: &str, source: &Path) -> Result<Vec<u8>> {
        let path = self.path_for(id);
        if let Ok(bytes) = std::fs::read(&path) {
            return Ok(bytes);
        }
        let png = encode_png(&read_image(source)?)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let tmp = path.with_extension("png.tmp");
        std::fs::write(&tmp, &png).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        self.generated.fetch_add(1, Ordering::SeqCst);
        Ok(png)
    }
}
