//! HTTP service: model training jobs, sampling, injection and animation
//! over trained pyramids. JSON in and out; images are served as PNG from a
//! content-addressed cache.

pub mod error;
pub mod jobs;
mod routes;

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use singan_core::store;
use singan_core::training::{train_pyramid_observed, GeneratorStack, TrainEvent};

pub use error::{ApiError, ErrorBody};
pub use jobs::{JobState, JobStatus, TrainParams};
pub use routes::router;

use jobs::{Job, JobTable, Pending};

pub const OPENAPI_JSON: &str = include_str!("../openapi.json");

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Checkpoints live under `data_dir/models/<id>`.
    pub data_dir: PathBuf,
    /// Most jobs allowed to wait; further uploads get 409.
    pub queue_depth: usize,
    /// Images kept in the in-memory cache.
    pub image_cache: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            queue_depth: 4,
            image_cache: 4096,
        }
    }
}

struct ImageCache {
    capacity: usize,
    order: VecDeque<String>,
    images: HashMap<String, Arc<Vec<u8>>>,
}

impl ImageCache {
    fn insert(&mut self, key: String, png: Vec<u8>) {
        if self.images.contains_key(&key) {
            return;
        }
        while self.order.len() >= self.capacity.max(1) {
            if let Some(old) = self.order.pop_front() {
                self.images.remove(&old);
            }
        }
        self.order.push_back(key.clone());
        self.images.insert(key, Arc::new(png));
    }
}

struct Inner {
    config: ServiceConfig,
    jobs: Mutex<JobTable>,
    models: RwLock<HashMap<String, Arc<GeneratorStack>>>,
    images: Mutex<ImageCache>,
    counter: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// State with the training worker not yet running; call
    /// [`AppState::start_worker`] to begin draining the queue.
    pub fn new(config: ServiceConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(config.data_dir.join("models"))?;
        let capacity = config.image_cache;
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                jobs: Mutex::new(JobTable::new()),
                models: RwLock::new(HashMap::new()),
                images: Mutex::new(ImageCache {
                    capacity,
                    order: VecDeque::new(),
                    images: HashMap::new(),
                }),
                counter: AtomicU64::new(0),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    fn model_dir(&self, id: &str) -> PathBuf {
        self.inner.config.data_dir.join("models").join(id)
    }

    fn fresh_id(&self, prefix: &str) -> String {
        let n = self.inner.counter.fetch_add(1, Ordering::Relaxed);
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        format!("{prefix}{t:x}{n:04x}")
    }

    /// Spawns the single training thread. Later calls do nothing.
    pub fn start_worker(&self) {
        let Some(rx) = self.inner.jobs.lock().expect("job table").receiver.take() else {
            return;
        };
        let state = self.clone();
        std::thread::Builder::new()
            .name("singan-train".into())
            .spawn(move || {
                for pending in rx {
                    state.run_job(pending);
                }
            })
            .expect("spawn training worker");
    }

    fn with_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.inner.jobs.lock().expect("job table").jobs.get_mut(id) {
            f(job);
        }
    }

    fn run_job(&self, p: Pending) {
        self.with_job(&p.job_id, |j| j.advance(JobState::Running));
        let result = train_pyramid_observed(&p.image, &p.config, &mut |e| match e {
            TrainEvent::ScaleStarted { scale, .. } => self.with_job(&p.job_id, |j| {
                j.scale = Some(*scale);
                j.iter = None;
            }),
            TrainEvent::Iteration(row) => self.with_job(&p.job_id, |j| {
                j.iter = Some(row.iteration);
                j.losses.push(row.clone());
            }),
            TrainEvent::ScaleFinished { .. } => {}
        })
        .and_then(|stack| {
            store::save(&stack, self.model_dir(&p.model_id))?;
            Ok(stack)
        });
        match result {
            Ok(stack) => {
                self.inner
                    .models
                    .write()
                    .expect("model table")
                    .insert(p.model_id.clone(), Arc::new(stack));
                self.with_job(&p.job_id, |j| j.advance(JobState::Done));
            }
            Err(e) => self.with_job(&p.job_id, |j| {
                j.error = Some(e.to_string());
                j.advance(JobState::Failed);
            }),
        }
    }

    /// Queues a training job; 409 when the queue is full.
    pub fn submit(&self, image: singan_core::imaging::ImageField, config: singan_core::training::TrainConfig) -> Result<(String, String), ApiError> {
        let num_scales = config.schedule_for(image.dims())?.num_scales();
        let mut table = self.inner.jobs.lock().expect("job table");
        if table.queued() >= self.inner.config.queue_depth {
            return Err(ApiError::conflict(format!(
                "{} jobs are already waiting",
                self.inner.config.queue_depth
            )));
        }
        let job_id = self.fresh_id("j");
        let model_id = self.fresh_id("m");
        table.jobs.insert(
            job_id.clone(),
            Job {
                model_id: model_id.clone(),
                state: JobState::Queued,
                scale: None,
                iter: None,
                num_scales,
                losses: Vec::new(),
                error: None,
            },
        );
        table
            .sender
            .send(Pending {
                job_id: job_id.clone(),
                model_id: model_id.clone(),
                image,
                config,
            })
            .map_err(|_| ApiError::internal("training worker has stopped"))?;
        Ok((job_id, model_id))
    }

    pub fn job_status(&self, id: &str, since: usize) -> Option<JobStatus> {
        self.inner.jobs.lock().expect("job table").jobs.get(id).map(|j| j.status(id, since))
    }

    /// Registers an already trained stack under `id`, also saving it.
    pub fn insert_model(&self, id: &str, stack: GeneratorStack) -> singan_core::Result<()> {
        store::save(&stack, self.model_dir(id))?;
        self.inner
            .models
            .write()
            .expect("model table")
            .insert(id.to_string(), Arc::new(stack));
        Ok(())
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }

    /// The stack for `id`, loading it from disk on first use.
    pub fn model(&self, id: &str) -> Result<Arc<GeneratorStack>, ApiError> {
        if !Self::valid_id(id) {
            return Err(ApiError::not_found(format!("no model {id}")));
        }
        if let Some(m) = self.inner.models.read().expect("model table").get(id) {
            return Ok(m.clone());
        }
        let dir = self.model_dir(id);
        if !dir.join("manifest.json").is_file() {
            return Err(ApiError::not_found(format!("no model {id}")));
        }
        let stack = Arc::new(store::load(&dir).map_err(|e| ApiError::internal(e.to_string()))?);
        Ok(self
            .inner
            .models
            .write()
            .expect("model table")
            .entry(id.to_string())
            .or_insert(stack)
            .clone())
    }

    pub fn model_manifest(&self, id: &str) -> Result<store::Manifest, ApiError> {
        if !Self::valid_id(id) || !self.model_dir(id).join("manifest.json").is_file() {
            return Err(ApiError::not_found(format!("no model {id}")));
        }
        store::read_manifest(self.model_dir(id)).map_err(|e| ApiError::internal(e.to_string()))
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = std::fs::read_dir(self.inner.config.data_dir.join("models"))
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().join("manifest.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        ids
    }

    /// Caches encoded image bytes and returns their content key.
    fn put_image(&self, bytes: Vec<u8>) -> String {
        let key = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
        self.inner.images.lock().expect("image cache").insert(key.clone(), bytes);
        key
    }

    fn image(&self, key: &str) -> Option<Arc<Vec<u8>>> {
        self.inner.images.lock().expect("image cache").images.get(key).cloned()
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.config.data_dir
    }
}

/// Serves the API on `addr` until ctrl-c, with the training worker running.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    state.start_worker();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
