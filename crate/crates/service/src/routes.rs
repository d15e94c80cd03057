use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use singan_core::applications::{animate, encode_gif, inject, presets, AnimationParams, InjectionRequest, Mask};
use singan_core::imaging::ImageField;
use singan_core::netspec::PaddingMode;
use singan_core::sampling::{generate, level_dims, samples_digest, SampleRequest};
use singan_core::training::GeneratorStack;

use crate::error::{ApiError, ApiResult};
use crate::{AppState, TrainParams, OPENAPI_JSON};

const MAX_UPLOAD: usize = 32 * 1024 * 1024;
const MAX_COUNT: usize = 64;
const MAX_FRAMES: usize = 240;
const MAX_DIM: usize = 2048;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/openapi.json", get(openapi))
        .route("/v1/models", post(create_model).get(list_models))
        .route("/v1/models/{id}", get(get_model))
        .route("/v1/models/{id}/samples", post(samples))
        .route("/v1/models/{id}/inject", post(inject_image))
        .route("/v1/models/{id}/animate", post(animate_frames))
        .route("/v1/models/{id}/presets", get(get_presets))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/images/{name}", get(get_image))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI_JSON)
}

/// Runs blocking model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

fn decode_image(bytes: &[u8], what: &str) -> ApiResult<ImageField> {
    ImageField::decode(bytes).map_err(|e| ApiError::bad_request(format!("{what} is not a readable image: {e}")))
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("{what}: {e}")))
}

async fn read_parts(mut multipart: Multipart) -> ApiResult<Vec<(String, Bytes)>> {
    let mut parts = Vec::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("reading part {name}: {e}")))?;
        parts.push((name, data));
    }
    Ok(parts)
}

fn take_part(parts: &mut Vec<(String, Bytes)>, name: &str) -> Option<Bytes> {
    let i = parts.iter().position(|(n, _)| n == name)?;
    Some(parts.remove(i).1)
}

#[derive(Serialize)]
struct Created {
    job_id: String,
    model_id: String,
}

async fn create_model(State(state): State<AppState>, multipart: Multipart) -> ApiResult<Response> {
    let mut parts = read_parts(multipart).await?;
    let image = take_part(&mut parts, "image").ok_or_else(|| ApiError::bad_request("missing image part"))?;
    let params: TrainParams = match take_part(&mut parts, "config") {
        Some(c) => parse_json(&c, "config")?,
        None => TrainParams::default(),
    };
    let config = params.to_config()?;
    let image = decode_image(&image, "image")?;
    let (job_id, model_id) = state.submit(image, config)?;
    let location = format!("/v1/jobs/{job_id}");
    Ok((
        StatusCode::ACCEPTED,
        [(header::LOCATION, location)],
        Json(Created { job_id, model_id }),
    )
        .into_response())
}

#[derive(Serialize)]
struct ModelList {
    models: Vec<String>,
}

async fn list_models(State(state): State<AppState>) -> Json<ModelList> {
    Json(ModelList {
        models: state.model_ids(),
    })
}

async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(state.model_manifest(&id)?).into_response())
}

#[derive(Deserialize)]
struct JobQuery {
    since: Option<usize>,
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<JobQuery>) -> ApiResult<Response> {
    state
        .job_status(&id, q.since.unwrap_or(0))
        .map(|s| Json(s).into_response())
        .ok_or_else(|| ApiError::not_found(format!("no job {id}")))
}

async fn get_presets() -> impl IntoResponse {
    Json(presets().clone())
}

fn etag_value(digest: &str) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{digest}\"")).expect("hex digest is a valid header")
}

async fn get_image(State(state): State<AppState>, Path(name): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let (key, mime) = match (name.strip_suffix(".png"), name.strip_suffix(".gif")) {
        (Some(k), _) => (k, "image/png"),
        (_, Some(k)) => (k, "image/gif"),
        _ => return Err(ApiError::not_found(format!("no image {name}"))),
    };
    let bytes = state.image(key).ok_or_else(|| ApiError::not_found(format!("no image {name}")))?;
    let etag = etag_value(key);
    if headers.get(header::IF_NONE_MATCH) == Some(&etag) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
    }
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(mime)),
            (header::ETAG, etag),
            (header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=31536000, immutable")),
        ],
        bytes.as_ref().clone(),
    )
        .into_response())
}

fn image_url(key: &str) -> String {
    format!("/v1/images/{key}.png")
}

fn store_images(state: &AppState, images: &[ImageField]) -> ApiResult<Vec<String>> {
    images
        .iter()
        .map(|img| Ok(image_url(&state.put_image(img.encode_png()?))))
        .collect()
}

fn check_scale(stack: &GeneratorStack, scale: usize, what: &str, allow_coarsest: bool) -> ApiResult<()> {
    let top = stack.coarsest();
    let ok = if allow_coarsest { scale <= top } else { scale < top };
    if ok {
        Ok(())
    } else {
        let range = if allow_coarsest { format!("0..={top}") } else { format!("0..{top}") };
        Err(ApiError::invalid(format!("{what} {scale} outside {range}")))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleBody {
    start_scale: Option<usize>,
    /// `[height, width]` at the finest scale.
    dims: Option<(usize, usize)>,
    count: Option<usize>,
    seed: Option<u64>,
    padding: Option<PaddingMode>,
}

#[derive(Serialize)]
struct SampleResponse {
    images: Vec<String>,
    etag: String,
}

async fn samples(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: SampleBody = parse_json(&body, "request body")?;
    let stack = state.model(&id)?;
    let start_scale = body.start_scale.unwrap_or(stack.coarsest());
    check_scale(&stack, start_scale, "start_scale", true)?;
    let count = body.count.unwrap_or(1);
    if !(1..=MAX_COUNT).contains(&count) {
        return Err(ApiError::invalid(format!("count {count} outside 1..={MAX_COUNT}")));
    }
    if let Some((h, w)) = body.dims {
        if h == 0 || w == 0 || h > MAX_DIM || w > MAX_DIM {
            return Err(ApiError::invalid(format!("dims {h}x{w} outside 1..={MAX_DIM}")));
        }
    }
    level_dims(&stack, body.dims)?;
    let req = SampleRequest {
        start_scale,
        output_dims: body.dims,
        padding_mode: body.padding.unwrap_or(stack.config.padding_mode),
        seed: body.seed.unwrap_or(0),
        count,
    };
    let st = state.clone();
    let (urls, digest) = blocking(move || {
        let images = generate(&stack, &req)?;
        Ok((store_images(&st, &images)?, samples_digest(&images)))
    })
    .await?;
    Ok((
        [(header::ETAG, etag_value(&digest))],
        Json(SampleResponse {
            images: urls,
            etag: digest,
        }),
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectParams {
    scale: usize,
    noise: Option<bool>,
    seed: Option<u64>,
    /// Gaussian feather radius of the mask, in pixels.
    feather: Option<usize>,
}

#[derive(Serialize)]
struct ImageResponse {
    image: String,
}

async fn inject_image(State(state): State<AppState>, Path(id): Path<String>, multipart: Multipart) -> ApiResult<Response> {
    let mut parts = read_parts(multipart).await?;
    let params: InjectParams = parse_json(
        &take_part(&mut parts, "params").ok_or_else(|| ApiError::bad_request("missing params part"))?,
        "params",
    )?;
    let stack = state.model(&id)?;
    check_scale(&stack, params.scale, "scale", false)?;
    if params.feather.is_some_and(|f| f > 64) {
        return Err(ApiError::invalid("feather must be at most 64"));
    }
    let image = decode_image(
        &take_part(&mut parts, "image").ok_or_else(|| ApiError::bad_request("missing image part"))?,
        "image",
    )?;
    let mask = match take_part(&mut parts, "mask") {
        Some(m) => {
            let mask = Mask::from_image(&decode_image(&m, "mask")?);
            if mask.dims() != stack.schedule.finest() {
                return Err(ApiError::invalid(format!(
                    "mask is {:?}, the model's finest scale is {:?}",
                    mask.dims(),
                    stack.schedule.finest()
                )));
            }
            Some(mask.feathered(params.feather.unwrap_or(0)))
        }
        None => None,
    };
    if image.channels() != stack.channels() {
        return Err(ApiError::invalid(format!(
            "{}-channel image for a {}-channel model",
            image.channels(),
            stack.channels()
        )));
    }
    let req = InjectionRequest {
        input: image,
        scale_n: params.scale,
        add_noise: params.noise.unwrap_or(true),
        blend_mask: mask,
        seed: params.seed.unwrap_or(0),
    };
    let st = state.clone();
    let url = blocking(move || {
        let out = inject(&stack, &req)?;
        Ok(store_images(&st, &[out])?.remove(0))
    })
    .await?;
    Ok(Json(ImageResponse { image: url }).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnimateBody {
    alpha: f64,
    beta: f64,
    start_scale: usize,
    frames: usize,
    seed: Option<u64>,
    fps: Option<u32>,
}

#[derive(Serialize)]
struct AnimateResponse {
    frames: Vec<String>,
    gif: String,
    fps: u32,
}

async fn animate_frames(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: AnimateBody = parse_json(&body, "request body")?;
    for (name, v) in [("alpha", body.alpha), ("beta", body.beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ApiError::invalid(format!("{name} {v} outside [0, 1]")));
        }
    }
    if !(1..=MAX_FRAMES).contains(&body.frames) {
        return Err(ApiError::invalid(format!("frames {} outside 1..={MAX_FRAMES}", body.frames)));
    }
    let stack = state.model(&id)?;
    check_scale(&stack, body.start_scale, "start_scale", true)?;
    let params = AnimationParams {
        alpha: body.alpha,
        beta: body.beta,
        start_scale: body.start_scale,
        frames: body.frames,
        fps: body.fps.unwrap_or(10).clamp(1, 60),
        seed: body.seed.unwrap_or(0),
    };
    let fps = params.fps;
    let st = state.clone();
    let (frames, gif) = blocking(move || {
        let frames = animate(&stack, &params)?;
        let gif = format!("/v1/images/{}.gif", st.put_image(encode_gif(&frames, fps)?));
        Ok((store_images(&st, &frames)?, gif))
    })
    .await?;
    Ok(Json(AnimateResponse { frames, gif, fps }).into_response())
}
