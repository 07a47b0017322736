use super::{HazardVerdict, Verbosity};
use crate::planner::Route;

/// Something the agent wants to tell the user.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageEvent {
    RoutePlanned {
        route: Route,
    },
    RouteChanged {
        route: Route,
        reason: String,
    },
    Arrival {
        name: String,
    },
    Hazard {
        verdict: HazardVerdict,
        alternative: Option<Route>,
    },
    HazardCleared,
    RerouteUnavailable,
    LocalizationWarning {
        expected: String,
        similarity: f64,
    },
    Relocalized {
        name: String,
        heading: u16,
    },
    LocalizationLost,
    PreferenceUpdated {
        summary: String,
    },
    UnknownPlace {
        place: String,
    },
    Unreachable {
        goal: String,
        due_to_constraints: bool,
    },
    Status {
        text: String,
    },
    NotUnderstood,
}

fn legs(n: usize) -> String {
    if n == 1 {
        "1 leg".to_string()
    } else {
        format!("{n} legs")
    }
}

fn summary(route: &Route) -> String {
    format!(
        "Route to {}: {} m in {}.",
        route.goal_name,
        route.total_distance,
        legs(route.len())
    )
}

/// Fixed templates. `Detailed` appends the leg-by-leg text wherever a route
/// is involved.
pub fn compose_user_message(event: &MessageEvent, verbosity: Verbosity) -> String {
    let detailed = verbosity == Verbosity::Detailed;
    match event {
        MessageEvent::RoutePlanned { route } => {
            if route.is_empty() {
                return route.description.clone();
            }
            if detailed {
                format!("{}\n{}", summary(route), route.description)
            } else {
                summary(route)
            }
        }
        MessageEvent::RouteChanged { route, reason } => {
            let head = format!("New route ({reason}). {}", summary(route));
            if detailed {
                format!("{head}\n{}", route.description)
            } else {
                head
            }
        }
        MessageEvent::Arrival { name } => format!("You have arrived at {name}."),
        MessageEvent::Hazard { verdict, alternative } => {
            let mut s = format!("Caution: {}.", verdict.reason);
            match alternative {
                Some(alt) => {
                    s.push_str(&format!(
                        " An alternative route of {} m is available. Say proceed or reroute.",
                        alt.total_distance
                    ));
                    if detailed {
                        s.push_str("\nAlternative route:\n");
                        s.push_str(&alt.description);
                    }
                }
                None => s.push_str(" No alternative route is available. Say proceed to continue with care."),
            }
            s
        }
        MessageEvent::HazardCleared => "Continuing on the current route. Please take care.".into(),
        MessageEvent::RerouteUnavailable => {
            "There is no other way around this hazard. Say proceed to continue with care.".into()
        }
        MessageEvent::LocalizationWarning { expected, similarity } => {
            if detailed {
                format!(
                    "This does not look like {expected} (match {similarity:.2}). I may be lost; checking where we are."
                )
            } else {
                format!("This does not look like {expected}. Checking where we are.")
            }
        }
        MessageEvent::Relocalized { name, heading } => {
            if detailed {
                format!("We are at {name}, facing {heading} degrees. Replanning from here.")
            } else {
                format!("We are at {name}. Replanning from here.")
            }
        }
        MessageEvent::LocalizationLost => "I cannot tell where we are. Please stop and ask for assistance.".into(),
        MessageEvent::PreferenceUpdated { summary } => format!("Preference updated: {summary}."),
        MessageEvent::UnknownPlace { place } => format!("I don't know where {place} is."),
        MessageEvent::Unreachable {
            goal,
            due_to_constraints,
        } => {
            if *due_to_constraints {
                format!("{goal} can only be reached by ignoring your current preferences.")
            } else {
                format!("{goal} cannot be reached from here.")
            }
        }
        MessageEvent::Status { text } => text.clone(),
        MessageEvent::NotUnderstood => "Sorry, I did not understand that.".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{parse_map, Heading, NodeId};
    use crate::planner::{k_alternative_routes, PlanConstraints};

    fn rect_routes() -> Vec<Route> {
        let m = parse_map(
            "MAP v1\nNODE A 0 0\nNODE B 4 0\nNODE C 4 3\nNODE D 0 3\n\
             EDGE A B dist=4 dir=0\nEDGE B C dist=3 dir=90\nEDGE A D dist=3 dir=90\nEDGE D C dist=4 dir=0\n",
        )
        .unwrap();
        let a = NodeId::new("A").unwrap();
        let c = NodeId::new("C").unwrap();
        k_alternative_routes(&m, &a, &c, Heading::EAST, 2, &PlanConstraints::default()).unwrap()
    }

    #[test]
    fn arrival_brief() {
        let e = MessageEvent::Arrival {
            name: "Elevator".into(),
        };
        assert_eq!(
            compose_user_message(&e, Verbosity::Brief),
            "You have arrived at Elevator."
        );
    }

    #[test]
    fn route_brief_vs_detailed() {
        let r = rect_routes().remove(0);
        let e = MessageEvent::RoutePlanned { route: r };
        assert_eq!(compose_user_message(&e, Verbosity::Brief), "Route to C: 7 m in 2 legs.");
        assert_eq!(
            compose_user_message(&e, Verbosity::Detailed),
            "Route to C: 7 m in 2 legs.\nLeg 1: turn straight, walk 4 m to B.\nLeg 2: turn left, walk 3 m to C."
        );
    }

    #[test]
    fn hazard_detailed_carries_reason_and_alternative() {
        let alt = rect_routes().remove(1);
        let e = MessageEvent::Hazard {
            verdict: HazardVerdict {
                hazardous: true,
                reason: "a wet floor sign ahead: the floor may be slippery".into(),
                confidence: 0.95,
            },
            alternative: Some(alt.clone()),
        };
        let text = compose_user_message(&e, Verbosity::Detailed);
        assert!(text.contains("wet floor sign"));
        assert!(text.ends_with(&alt.description));
        assert_eq!(text, compose_user_message(&e, Verbosity::Detailed));
        assert!(text.contains("Leg 1: turn left, walk 3 m to D."));
    }
}
