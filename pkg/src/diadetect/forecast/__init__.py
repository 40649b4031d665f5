"""Load forecasters: extremely randomized trees, stacked LSTM, BiLSTM and an
idealized oracle, plus forecast-accuracy metrics."""
