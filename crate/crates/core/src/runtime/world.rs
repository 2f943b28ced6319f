//! Simulated environment the builtin tools read and mutate.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ErrorCode;

/// Token seed under which the first booking confirms as `ABC123`.
pub const DEFAULT_TOKEN_SEED: u64 = 26_279_569;

fn default_date() -> String {
    "tomorrow".into()
}

fn default_token_seed() -> u64 {
    DEFAULT_TOKEN_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherRow {
    pub location: String,
    #[serde(default = "default_date")]
    pub date: String,
    pub temp_f: f64,
    pub precipitation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledFault {
    pub tool: String,
    /// 1-based count of calls to `tool` within the episode.
    pub ordinal: u64,
    pub code: ErrorCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentEmail {
    pub to: String,
    pub subject: String,
    pub message_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booking {
    pub location: String,
    pub confirmation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub location: String,
    pub artifact_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldState {
    #[serde(default = "default_token_seed")]
    pub token_seed: u64,
    #[serde(default = "default_date")]
    pub default_date: String,
    #[serde(default)]
    pub weather: Vec<WeatherRow>,
    #[serde(default)]
    pub faults: Vec<ScheduledFault>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outbox: Vec<SentEmail>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bookings: Vec<Booking>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub charts: Vec<Chart>,
}

impl Default for WorldState {
    fn default() -> Self {
        Self {
            token_seed: DEFAULT_TOKEN_SEED,
            default_date: default_date(),
            weather: Vec::new(),
            faults: Vec::new(),
            outbox: Vec::new(),
            bookings: Vec::new(),
            charts: Vec::new(),
        }
    }
}

impl WorldState {
    pub fn with_weather(mut self, location: &str, temp_f: f64, precipitation: bool) -> Self {
        self.weather.push(WeatherRow {
            location: location.into(),
            date: self.default_date.clone(),
            temp_f,
            precipitation,
        });
        self
    }

    pub fn with_fault(mut self, tool: &str, ordinal: u64, code: ErrorCode) -> Self {
        self.faults.push(ScheduledFault {
            tool: tool.into(),
            ordinal,
            code,
        });
        self
    }

    pub fn weather_at(&self, location: &str, date: &str) -> Option<&WeatherRow> {
        self.weather.iter().find(|r| r.location == location && r.date == date)
    }

    pub fn scheduled_fault(&self, tool: &str, ordinal: u64) -> Option<ErrorCode> {
        self.faults
            .iter()
            .find(|f| f.tool == tool && f.ordinal == ordinal)
            .map(|f| f.code)
    }

    /// Three letters and three digits derived from the token seed and the
    /// booking's ordinal.
    pub fn confirmation_token(&self, ordinal: usize) -> String {
        let digest = Sha256::digest(format!("booking:{}:{ordinal}", self.token_seed).as_bytes());
        let letters: String = digest[..3].iter().map(|b| (b'A' + b % 26) as char).collect();
        let digits = u16::from_be_bytes([digest[3], digest[4]]) % 1000;
        format!("{letters}{digits:03}")
    }
}
