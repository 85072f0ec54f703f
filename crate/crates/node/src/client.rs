//! Thin async client for a ledger node's HTTP API.

use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::api::{
    ChainResponse, ErrorBody, MineResponse, PeersRequest, PeersResponse, PendingResponse,
    ProfileAccepted, ProfileEntries, ResyncResponse,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach node at {url}: {message}")]
    Connect { url: String, message: String },
    #[error("node answered {status}: {}", body.error)]
    Server { status: StatusCode, body: ErrorBody },
    #[error("unexpected response from {url}: {message}")]
    Decode { url: String, message: String },
}

#[derive(Debug, Clone)]
pub struct NodeClient {
    base: String,
    http: reqwest::Client,
}

impl NodeClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_timeout(base, Duration::from_secs(60))
    }

    pub fn with_timeout(base: impl Into<String>, timeout: Duration) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("default reqwest client builds");
        Self { base, http }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send<T: DeserializeOwned>(
        &self,
        request: reqwest::RequestBuilder,
        url: &str,
    ) -> Result<T, ClientError> {
        let response = request.send().await.map_err(|e| ClientError::Connect {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let status = response.status();
        let text = response.text().await.map_err(|e| ClientError::Connect {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
                error: text,
                line: None,
                column: None,
            });
            return Err(ClientError::Server { status, body });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Decode {
            url: url.to_string(),
            message: e.to_string(),
        })
    }

    /// Posts an entity CSV. `n_sources` overrides the node's default.
    pub async fn post_profile_csv(
        &self,
        csv: &str,
        n_sources: Option<u32>,
    ) -> Result<ProfileAccepted, ClientError> {
        let mut url = format!("{}/profile", self.base);
        if let Some(n) = n_sources {
            url.push_str(&format!("?n_sources={n}"));
        }
        let request = self
            .http
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, "text/csv")
            .body(csv.to_string());
        self.send(request, &url).await
    }

    pub async fn post_profile_entries(
        &self,
        profile: &ProfileEntries,
    ) -> Result<ProfileAccepted, ClientError> {
        let url = format!("{}/profile", self.base);
        let request = self.http.post(&url).json(profile);
        self.send(request, &url).await
    }

    pub async fn mine(&self) -> Result<MineResponse, ClientError> {
        let url = format!("{}/mine", self.base);
        self.send(self.http.post(&url), &url).await
    }

    pub async fn chain(&self) -> Result<ChainResponse, ClientError> {
        let url = format!("{}/chain", self.base);
        self.send(self.http.get(&url), &url).await
    }

    pub async fn pending(&self) -> Result<PendingResponse, ClientError> {
        let url = format!("{}/pending", self.base);
        self.send(self.http.get(&url), &url).await
    }

    pub async fn register_peers(&self, peers: &[String]) -> Result<PeersResponse, ClientError> {
        let url = format!("{}/peers", self.base);
        let request = self.http.post(&url).json(&PeersRequest {
            peers: peers.to_vec(),
        });
        self.send(request, &url).await
    }

    pub async fn list_peers(&self) -> Result<PeersResponse, ClientError> {
        let url = format!("{}/peers", self.base);
        self.send(self.http.get(&url), &url).await
    }

    pub async fn resync(&self) -> Result<ResyncResponse, ClientError> {
        let url = format!("{}/resync", self.base);
        self.send(self.http.post(&url), &url).await
    }
}
