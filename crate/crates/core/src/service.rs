//! Read-only HTTP scoring over a finished run.
//!
//! `POST /predict` scores one record, `POST /predict/batch` an array of
//! records, `GET /health` reports the loaded run and `GET /schema` returns the
//! feature schema. A record is a JSON object of feature name to number or
//! `null`; omitted features count as missing. `?model=` picks the scorer:
//! `seqmodel` (default) or one of the baseline kinds.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cohort::{FeatureSchema, Outcome, Severity};
use crate::error::{Error, Result};
use crate::learners::{BaselineKind, ModelArtifact, Target};
use crate::pipeline::Pipeline;
use crate::preprocess::ImputeModel;
use crate::promptify::Tokenizer;
use crate::seqmodel::{decode_constrained, SeqModel};

/// Which scorer answers a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    SeqModel,
    Baseline(BaselineKind),
}

impl ModelChoice {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "seqmodel" => Some(ModelChoice::SeqModel),
            other => BaselineKind::parse(other).map(ModelChoice::Baseline),
        }
    }

    /// Identifier reported in responses; names how missing values were handled.
    pub fn model_id(self) -> String {
        match self {
            ModelChoice::SeqModel => "seqmodel-constrained+missing-markers".to_string(),
            ModelChoice::Baseline(k) => format!("{}+train-imputed", k.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub severity: String,
    pub outcome: String,
    /// `[mild, severe]`.
    pub severity_probs: [f64; 2],
    /// `[survive, death]`.
    pub outcome_probs: [f64; 2],
    pub model: String,
    pub schema_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
    pub run: String,
    pub schema_version: String,
}

/// Everything needed to score records, loaded once from a run directory.
pub struct ScoringPipeline {
    run: String,
    schema_version: String,
    tokenizer: Tokenizer,
    seqmodel: SeqModel,
    impute: ImputeModel,
    baselines: BTreeMap<BaselineKind, (ModelArtifact, ModelArtifact)>,
}

impl ScoringPipeline {
    /// Loads the checkpoint, binning, imputation and baseline artifacts of `pipeline`.
    pub fn load(pipeline: &Pipeline) -> Result<Self> {
        let tokenizer = pipeline.tokenizer()?;
        let seqmodel = pipeline.seqmodel(&tokenizer)?;
        let impute = pipeline.impute_model()?;
        let mut baselines = BTreeMap::new();
        for kind in BaselineKind::ALL {
            let sev = pipeline.baseline(kind, Target::Severity)?;
            let out = pipeline.baseline(kind, Target::Outcome)?;
            baselines.insert(kind, (sev, out));
        }
        let schema_json = serde_json::to_vec(tokenizer.schema())?;
        let schema_version = hex::encode(Sha256::digest(&schema_json))[..16].to_string();
        let run = pipeline
            .run_dir()
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(ScoringPipeline {
            run,
            schema_version,
            tokenizer,
            seqmodel,
            impute,
            baselines,
        })
    }

    /// Features accepted in a record.
    pub fn schema(&self) -> &FeatureSchema {
        self.tokenizer.schema()
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn run(&self) -> &str {
        &self.run
    }

    /// Scores one record. Absent and `None` values are missing.
    pub fn predict(&self, record: &BTreeMap<String, Option<f64>>, choice: ModelChoice) -> Result<PredictResponse> {
        let schema = self.schema();
        let mut values = BTreeMap::new();
        let mut bad = Vec::new();
        for (name, v) in record {
            if !schema.contains(name) {
                bad.push(format!("{name}: unknown feature"));
            } else if let Some(v) = v {
                if v.is_finite() {
                    values.insert(name.clone(), *v);
                } else {
                    bad.push(format!("{name}: value must be finite"));
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let (sev, out, severity_probs, outcome_probs) = match choice {
            ModelChoice::SeqModel => {
                let tokens = self.tokenizer.tokenize_values(&values)?;
                let r = decode_constrained(&self.seqmodel, &tokens)?;
                (r.label.severity().bit(), r.label.outcome().bit(), r.severity_probs, r.outcome_probs)
            }
            ModelChoice::Baseline(kind) => {
                let (sev_model, out_model) = &self.baselines[&kind];
                let filled = self.impute.fill_values(&schema.names(), &values)?;
                let score = |m: &ModelArtifact| -> Result<(u8, f64)> {
                    let row: Vec<f64> = m.features.iter().map(|f| filled[f]).collect();
                    let clf = m.model.as_classifier();
                    Ok((clf.predict(&row)?, clf.predict_proba(&row)?))
                };
                let (sev, ps) = score(sev_model)?;
                let (out, po) = score(out_model)?;
                (sev, out, [1.0 - ps, ps], [1.0 - po, po])
            }
        };
        Ok(PredictResponse {
            severity: Severity::from_bit(sev).unwrap().as_str().to_string(),
            outcome: Outcome::from_bit(out).unwrap().as_str().to_string(),
            severity_probs,
            outcome_probs,
            model: choice.model_id(),
            schema_version: self.schema_version.clone(),
        })
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    fields: Vec<String>,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn bad(fields: Vec<String>) -> Self {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorBody {
                error: "invalid request".into(),
                fields,
            },
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(fields) => ApiError::bad(fields),
            Error::SchemaMismatch(m) | Error::InvalidInput(m) => ApiError::bad(vec![m]),
            Error::UnfittableFeature(f) => ApiError::bad(vec![format!("{f}: no fitted bins for this feature")]),
            other => ApiError(
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: other.to_string(),
                    fields: Vec::new(),
                },
            ),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn rejection(r: JsonRejection) -> ApiError {
    ApiError(
        r.status(),
        ErrorBody {
            error: "malformed body".into(),
            fields: vec![r.body_text()],
        },
    )
}

/// Converts a JSON object into a record, collecting one message per bad field.
/// `prefix` locates the record within a batch.
fn parse_record(v: &Value, prefix: &str) -> std::result::Result<BTreeMap<String, Option<f64>>, Vec<String>> {
    let Value::Object(map) = v else {
        return Err(vec![format!("{prefix}record must be a JSON object")]);
    };
    let mut out = BTreeMap::new();
    let mut bad = Vec::new();
    for (k, v) in map {
        match v {
            Value::Null => {
                out.insert(k.clone(), None);
            }
            Value::Number(n) => {
                out.insert(k.clone(), n.as_f64());
            }
            _ => bad.push(format!("{prefix}{k}: expected a number or null")),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(bad)
    }
}

#[derive(Deserialize)]
struct ModelQuery {
    model: Option<String>,
}

fn choice(q: &ModelQuery) -> std::result::Result<ModelChoice, ApiError> {
    match q.model.as_deref() {
        None => Ok(ModelChoice::SeqModel),
        Some(name) => ModelChoice::parse(name).ok_or_else(|| {
            ApiError::bad(vec![format!(
                "model: unknown model '{name}' (expected seqmodel, adaboost, gbdt, random_forest or knn)"
            )])
        }),
    }
}

fn prefixed(e: Error, prefix: &str) -> ApiError {
    match ApiError::from(e) {
        ApiError(s, mut body) if s.is_client_error() => {
            body.fields.iter_mut().for_each(|f| f.insert_str(0, prefix));
            ApiError(s, body)
        }
        other => other,
    }
}

type Shared = Arc<ScoringPipeline>;

async fn predict(
    State(p): State<Shared>,
    Query(q): Query<ModelQuery>,
    body: std::result::Result<Json<Value>, JsonRejection>,
) -> std::result::Result<Json<PredictResponse>, ApiError> {
    let Json(v) = body.map_err(rejection)?;
    let record = parse_record(&v, "").map_err(ApiError::bad)?;
    Ok(Json(p.predict(&record, choice(&q)?)?))
}

async fn predict_batch(
    State(p): State<Shared>,
    Query(q): Query<ModelQuery>,
    body: std::result::Result<Json<Value>, JsonRejection>,
) -> std::result::Result<Json<Vec<PredictResponse>>, ApiError> {
    let Json(v) = body.map_err(rejection)?;
    let Value::Array(items) = v else {
        return Err(ApiError::bad(vec!["body must be a JSON array of records".into()]));
    };
    let model = choice(&q)?;
    let mut records = Vec::with_capacity(items.len());
    let mut bad = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match parse_record(item, &format!("[{i}].")) {
            Ok(r) => records.push(r),
            Err(mut e) => bad.append(&mut e),
        }
    }
    if !bad.is_empty() {
        return Err(ApiError::bad(bad));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| p.predict(r, model).map_err(|e| prefixed(e, &format!("[{i}]."))))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Json)
}

async fn health(State(p): State<Shared>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model: ModelChoice::SeqModel.model_id(),
        run: p.run.clone(),
        schema_version: p.schema_version.clone(),
    })
}

async fn schema(State(p): State<Shared>) -> Json<FeatureSchema> {
    Json(p.schema().clone())
}

pub fn router(pipeline: Arc<ScoringPipeline>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/predict/batch", post(predict_batch))
        .route("/health", get(health))
        .route("/schema", get(schema))
        .with_state(pipeline)
}

/// Serves `pipeline` on `addr` until the process ends.
pub async fn serve(pipeline: ScoringPipeline, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(pipeline))).await?;
    Ok(())
}
