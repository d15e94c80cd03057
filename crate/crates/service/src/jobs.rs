//! Training jobs: a bounded queue drained by one in-process worker, so at
//! most one training runs at a time.

use std::collections::HashMap;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use singan_core::applications::SuperResConfig;
use singan_core::imaging::ImageField;
use singan_core::netspec::PaddingMode;
use singan_core::training::{LogRow, TrainConfig};

use crate::error::{ApiError, ApiResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        }
    }
}

/// Training options accepted with an upload; unset fields keep the
/// standard configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    /// Largest finest-scale dimension; 0 keeps the input size.
    pub max_dim: Option<usize>,
    pub min_coarse_dim: Option<usize>,
    /// Trains a super-resolution pyramid for this upscale factor.
    pub sr_factor: Option<u32>,
    pub padding: Option<PaddingMode>,
}

impl TrainParams {
    pub fn to_config(&self) -> ApiResult<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(iters) = self.iters {
            if !(1..=100_000).contains(&iters) {
                return Err(ApiError::invalid(format!("iters {iters} outside 1..=100000")));
            }
            cfg = cfg.with_iters(iters);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.max_dim {
            cfg.schedule.max_fine_dim = (d > 0).then_some(d);
        }
        if let Some(m) = self.min_coarse_dim {
            if m < 11 {
                return Err(ApiError::invalid(format!("min_coarse_dim {m} is below the 11 px receptive field")));
            }
            cfg.schedule.min_coarse_dim = m;
        }
        if let Some(p) = self.padding {
            cfg.padding_mode = p;
        }
        if let Some(s) = self.sr_factor {
            if !(1..=16).contains(&s) {
                return Err(ApiError::invalid(format!("sr_factor {s} outside 1..=16")));
            }
            cfg = SuperResConfig::new(s)?.train_config(&cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub model_id: String,
    pub state: JobState,
    /// Scale currently training.
    pub scale: Option<usize>,
    /// Last finished iteration within the current scale.
    pub iter: Option<usize>,
    pub num_scales: usize,
    /// Log rows from `since` onward.
    pub losses: Vec<LogRow>,
    pub losses_total: usize,
    pub error: Option<String>,
}

pub(crate) struct Job {
    pub model_id: String,
    pub state: JobState,
    pub scale: Option<usize>,
    pub iter: Option<usize>,
    pub num_scales: usize,
    pub losses: Vec<LogRow>,
    pub error: Option<String>,
}

impl Job {
    pub fn status(&self, id: &str, since: usize) -> JobStatus {
        JobStatus {
            id: id.to_string(),
            model_id: self.model_id.clone(),
            state: self.state,
            scale: self.scale,
            iter: self.iter,
            num_scales: self.num_scales,
            losses: self.losses.get(since..).map(<[LogRow]>::to_vec).unwrap_or_default(),
            losses_total: self.losses.len(),
            error: self.error.clone(),
        }
    }

    /// States only move forward.
    pub fn advance(&mut self, to: JobState) {
        if to.rank() > self.state.rank() {
            self.state = to;
        }
    }
}

pub(crate) struct Pending {
    pub job_id: String,
    pub model_id: String,
    pub image: ImageField,
    pub config: TrainConfig,
}

pub(crate) struct JobTable {
    pub jobs: HashMap<String, Job>,
    pub sender: mpsc::Sender<Pending>,
    pub receiver: Option<mpsc::Receiver<Pending>>,
}

impl JobTable {
    pub fn new() -> Self {
        let (sender, receiver) = mpsc::channel();
        Self {
            jobs: HashMap::new(),
            sender,
            receiver: Some(receiver),
        }
    }

    pub fn queued(&self) -> usize {
        self.jobs.values().filter(|j| j.state == JobState::Queued).count()
    }
}
