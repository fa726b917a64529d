"""voxstyle: desk-scale voice style transfer toolkit.

Subpackages and modules:
    audio     waveform I/O, STFT, mel analysis, Griffin-Lim inversion
    world     f0 / spectral envelope / aperiodicity features, pitch mapping
    nn        minimal autodiff tensor core, layers, Adam, parameter store
    ctc       CTC loss, brute-force alignment oracle, greedy decoding
    asr       convolutional-recurrent recognizer and its training loop
    speaker   LSTM speaker encoder with a contrastive objective
    synth     style-conditioned attention text-to-spectrogram model
    cyclegan  cycle-consistent adversarial converter on envelope features
    corpus    corpus ingestion and the synthetic toy corpus generator
    pipeline  end-to-end conversion, checkpoints, spectrogram images, eval
    cli       command-line entry points
"""

__version__ = "0.1.0"
