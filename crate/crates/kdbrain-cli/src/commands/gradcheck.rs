use crate::GradcheckArgs;
use kdbrain::train::full_loss_grad_check;
use kdbrain::{KdError, Result};

pub fn run(args: &GradcheckArgs) -> Result<i32> {
    if args.tolerance.is_nan() || args.tolerance <= 0.0 {
        return Err(KdError::validation("tolerance must be > 0"));
    }
    let report = full_loss_grad_check(args.seed, args.step, args.tolerance)?;
    print!("{}", report.render());
    Ok(if report.passed() { 0 } else { 2 })
}
