"""Eye-contact detection from face patches: a multi-task CNN with an implicit
head-pose branch, three comparison detectors, online child-face selection and
imbalance-aware evaluation, together with a synthetic face generator.

Submodules are imported on demand; the package root stays light so the
command-line entry point can set thread limits before numerical libraries
load.
"""

__version__ = "0.1.0"
