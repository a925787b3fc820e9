//! Process exit codes.

use denoise_core::Error;

pub const USAGE: i32 = 2;
pub const DATA: i32 = 3;
pub const PROVIDER: i32 = 4;
pub const NUMERIC: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: DATA,
            message: message.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => USAGE,
        Error::NonFinite { .. } => NUMERIC,
        Error::Failures(list) if list.iter().any(Error::is_provider_failure) => PROVIDER,
        root if root.is_provider_failure() => PROVIDER,
        _ => DATA,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let mut message = e.to_string();
        if let Error::Failures(list) = e.root() {
            for f in list {
                message.push_str(&format!("\n  {f}"));
            }
        }
        Self {
            code: exit_code(&e),
            message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), USAGE);
        assert_eq!(exit_code(&Error::Malformed { line: 3, message: "x".into() }), DATA);
        assert_eq!(exit_code(&Error::Timeout(1.0).with_subject("user u1")), PROVIDER);
        assert_eq!(exit_code(&Error::NonFinite { term: "l_rec".into(), step: 4 }), NUMERIC);
        let f = Failure::from(Error::Failures(vec![Error::Timeout(2.0).with_subject("u1"), Error::Saturated]));
        assert_eq!(f.code, PROVIDER);
        assert_eq!(f.message.lines().count(), 3);
    }
}
