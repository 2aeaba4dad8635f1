//! Distribution schemes. Each decides, per iteration, which gradients reach
//! which views and when, and which nodes count towards `I_t`.
//!
//! Parallel-step schemes emit per-receiver lists of [`Term`](crate::kernel::Term)s
//! that the kernel applies; single-step schemes build the acting worker's
//! view directly. Every random choice comes from the schedule stream and is
//! logged as a [`ScheduleEvent`].

mod config;
mod schemes;

pub use config::{load_schedule, RelaxationConfig, ScheduleEvent, SchemeKind};
pub use schemes::{
    advance_async_mp, advance_crash, advance_elastic_norm, advance_elastic_var, advance_exact,
    advance_omission, Delivery, DeliveryCtx, EventSink, SchemeState,
};
