//! Async client for the segmentation service.

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use zoomseg_api::{
    CreateSession, EditPoint, EditRequest, EditResponse, ErrorBody, MaskSliceRLE, PromptSetJson,
    SessionCreated, SessionSummary, VolumeInfo,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Status { status: StatusCode, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Client {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn check(resp: Response) -> Result<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        Err(ClientError::Status { status, message })
    }

    async fn json<T: DeserializeOwned>(resp: Response) -> Result<T> {
        Ok(Self::check(resp).await?.json().await?)
    }

    /// Uploads NIfTI bytes (plain or gzipped).
    pub async fn upload_volume(&self, nifti: Vec<u8>) -> Result<VolumeInfo> {
        Self::json(
            self.http
                .post(self.url("/volumes"))
                .body(nifti)
                .send()
                .await?,
        )
        .await
    }

    pub async fn create_session(
        &self,
        volume_id: u64,
        prompts: PromptSetJson,
    ) -> Result<SessionCreated> {
        let body = CreateSession { volume_id, prompts };
        Self::json(
            self.http
                .post(self.url("/sessions"))
                .json(&body)
                .send()
                .await?,
        )
        .await
    }

    pub async fn edit(&self, session_id: u64, point: EditPoint) -> Result<EditResponse> {
        let body = EditRequest { point };
        let url = self.url(&format!("/sessions/{session_id}/edit"));
        Self::json(self.http.post(url).json(&body).send().await?).await
    }

    pub async fn session(&self, session_id: u64) -> Result<SessionSummary> {
        Self::json(
            self.http
                .get(self.url(&format!("/sessions/{session_id}")))
                .send()
                .await?,
        )
        .await
    }

    pub async fn mask_slice(&self, session_id: u64, z: usize) -> Result<MaskSliceRLE> {
        let url = self.url(&format!("/sessions/{session_id}/mask?z={z}"));
        Self::json(self.http.get(url).send().await?).await
    }

    /// Whole mask as gzipped NIfTI bytes.
    pub async fn mask_nifti(&self, session_id: u64) -> Result<Vec<u8>> {
        let url = self.url(&format!("/sessions/{session_id}/mask.nii"));
        Ok(Self::check(self.http.get(url).send().await?)
            .await?
            .bytes()
            .await?
            .to_vec())
    }

    /// Windowed slice as PNG bytes; `None` uses the server defaults.
    pub async fn image_slice(
        &self,
        session_id: u64,
        z: usize,
        window: Option<(f32, f32)>,
    ) -> Result<Vec<u8>> {
        let mut url = self.url(&format!("/sessions/{session_id}/image?z={z}"));
        if let Some((wl, ww)) = window {
            url.push_str(&format!("&wl={wl}&ww={ww}"));
        }
        Ok(Self::check(self.http.get(url).send().await?)
            .await?
            .bytes()
            .await?
            .to_vec())
    }

    pub async fn health(&self) -> Result<()> {
        Self::check(self.http.get(self.url("/health")).send().await?)
            .await
            .map(|_| ())
    }
}
