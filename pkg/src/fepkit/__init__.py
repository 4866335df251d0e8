"""Frame error prediction toolkit for collaborative radio links.

Submodules:
    numcore   - float64 matrices, activations, loss, optimizers, grad checking
    recurrent - GRU/SRU cells, masked sequence runs, BPTT
    models    - the four architectures, training loop, prediction, model files
    datamodel - frame/match records, match-log files, features
    tracegen  - calibrated synthetic scrimmage generator
    featsel   - CART decision tree and recursive feature elimination
    evalsuite - splits, metrics, kNN baseline, reports, profiling
    cli       - command-line front end
"""

__version__ = "0.1.0"
