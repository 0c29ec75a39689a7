use std::time::Duration;

use aviscape_core::classifier::{FeatureEndpoint, ServiceRequest, ServiceResponse};
use tokio::runtime::Handle;

/// Client for an external recognition service: `POST {base}/v1/recognize`.
///
/// Calls block the current thread on the runtime handle, so they must come
/// from a blocking task (recognition always runs in one).
pub struct HttpEndpoint {
    client: reqwest::Client,
    url: String,
    handle: Handle,
}

impl HttpEndpoint {
    pub fn new(base_url: &str, timeout: Duration, handle: Handle) -> Result<Self, reqwest::Error> {
        let client = reqwest::Client::builder().timeout(timeout).build()?;
        Ok(Self { client, url: format!("{}/v1/recognize", base_url.trim_end_matches('/')), handle })
    }
}

impl FeatureEndpoint for HttpEndpoint {
    fn classify(&self, request: &ServiceRequest) -> Result<ServiceResponse, String> {
        self.handle.block_on(async {
            let response = self.client.post(&self.url).json(request).send().await.map_err(|e| e.to_string())?;
            let status = response.status();
            if !status.is_success() {
                return Err(format!("recognition service answered {status}"));
            }
            response.json::<ServiceResponse>().await.map_err(|e| e.to_string())
        })
    }
}
