# Whisper Prompt Toolkit package
