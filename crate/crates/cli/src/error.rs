use pctrees::Category;
use thiserror::Error;

/// A failure reported as `error[<category>]: <detail>` on one line.
#[derive(Debug, Error)]
#[error("error[{category}]: {detail}")]
pub struct CliError {
    pub category: Category,
    pub detail: String,
}

impl CliError {
    pub fn config(detail: impl Into<String>) -> Self {
        Self {
            category: Category::Config,
            detail: detail.into(),
        }
    }

    pub fn format(detail: impl Into<String>) -> Self {
        Self {
            category: Category::Format,
            detail: detail.into(),
        }
    }

    pub fn io(detail: impl Into<String>) -> Self {
        Self {
            category: Category::Io,
            detail: detail.into(),
        }
    }
}

impl From<pctrees::Error> for CliError {
    fn from(e: pctrees::Error) -> Self {
        Self {
            category: e.category(),
            // keep the report on one line
            detail: e.to_string().replace('\n', " "),
        }
    }
}
